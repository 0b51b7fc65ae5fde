#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace rvae::csv {

using Record = std::vector<std::string>;

// RFC-4180 parsing: quoted fields, doubled quotes, CRLF or LF line ends.
// Blank lines are skipped. Throws IoError on an unterminated quote.
std::vector<Record> parse(std::string_view text);
std::vector<Record> read_file(const std::string& path);

// Quotes the field only when needed.
std::string escape(std::string_view field);
void write_record(std::ostream& out, const Record& record);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
// Strict full-string parse; returns false on trailing junk or non-finite.
bool parse_double(std::string_view text, double& out);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view contents);

}  // namespace rvae::csv
