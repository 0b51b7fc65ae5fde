#include "rvae/checkpoint.h"

#include <bit>
#include <cstring>

#include "rvae/csv.h"
#include "rvae/error.h"

namespace rvae {

namespace {

constexpr char kMagic[8] = {'R', 'V', 'A', 'E', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

const Matrix& Container::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw IoError("checkpoint has no tensor '" + name + "'");
}

std::string serialize_container(const Container& container) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : container.tensors) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(t.value.size()) * 8;
    manifest.push_back({{"name", t.name},
                        {"rows", t.value.rows()},
                        {"cols", t.value.cols()},
                        {"offset", offset},
                        {"bytes", bytes}});
    offset += bytes;
  }
  nlohmann::json header{{"format_version", kContainerFormatVersion},
                        {"metadata", container.metadata},
                        {"tensors", manifest}};
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, header_text.size());
  out += header_text;
  out.reserve(out.size() + offset);
  for (const auto& t : container.tensors) {
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        put_u64(out, std::bit_cast<std::uint64_t>(t.value(r, c)));
      }
    }
  }
  return out;
}

Container deserialize_container(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file (bad magic bytes)");
  }
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (header_len > bytes.size() - 16) throw IoError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (!header.contains("format_version") || header["format_version"] != kContainerFormatVersion) {
    throw IoError("unsupported checkpoint format version " +
                  (header.contains("format_version") ? header["format_version"].dump() : "?"));
  }
  const std::size_t payload = 16 + header_len;
  Container c;
  c.metadata = header.value("metadata", nlohmann::json::object());
  try {
    for (const auto& entry : header.at("tensors")) {
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("bytes").get<std::uint64_t>();
      if (rows < 0 || cols < 0 || nbytes != static_cast<std::uint64_t>(rows * cols) * 8) {
        throw IoError("inconsistent tensor manifest entry");
      }
      if (payload + offset + nbytes > bytes.size()) {
        throw IoError("truncated checkpoint payload");
      }
      Matrix m(rows, cols);
      std::size_t pos = payload + offset;
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index col = 0; col < cols; ++col, pos += 8) {
          m(r, col) = std::bit_cast<double>(get_u64(bytes, pos));
        }
      }
      c.tensors.push_back({entry.at("name").get<std::string>(), std::move(m)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt tensor manifest: ") + e.what());
  }
  return c;
}

void write_container(const std::string& path, const Container& container) {
  csv::write_text_file(path, serialize_container(container));
}

Container read_container(const std::string& path) {
  return deserialize_container(csv::read_text_file(path));
}

}  // namespace rvae
