#pragma once

// File formats exchanged between commands.
//
//   scores:  row_id,feature,rule,score   (feature "__row__" holds row scores)
//   simplex: row_id,feature,category,probability   (categorical features only)

#include <iosfwd>
#include <string>
#include <vector>

#include "rvae/nn.h"
#include "rvae/scoring.h"
#include "rvae/table.h"

namespace rvae::cli {

inline constexpr const char* kRowScoreName = "__row__";

void write_scores(std::ostream& out, const TableSchema& schema, const ScoreReport& report);
// Cells missing from the file are an error.
ScoreReport read_scores(const std::string& path, const TableSchema& schema, std::size_t rows);

void write_simplex(std::ostream& out, const TableSchema& schema, const std::vector<Matrix>& simplex);
std::vector<Matrix> read_simplex(const std::string& path, const TableSchema& schema,
                                 std::size_t rows);

}  // namespace rvae::cli
