#include "rvae/corruption.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rvae/csv.h"
#include "rvae/error.h"

namespace rvae {

namespace {

double parse_number(const std::string& text, const std::string& clause) {
  double v = 0.0;
  if (!csv::parse_double(text, v)) {
    throw ConfigError("noise spec clause '" + clause + "': '" + text + "' is not a number");
  }
  return v;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string current;
  for (char ch : text) {
    if (ch == sep) {
      parts.push_back(current);
      current.clear();
    } else if (ch != ' ') {
      current.push_back(ch);
    }
  }
  parts.push_back(current);
  return parts;
}

// Picks `count` distinct indices of [0, n) by a partial Fisher-Yates shuffle,
// returned in increasing order.
std::vector<std::size_t> choose_distinct(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(pool[i], pool[i + rng.uniform_index(n - i)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

void NoiseSpec::validate() const {
  if (real == RealNoise::kGaussMix) {
    for (const auto& c : mix) {
      if (!(c.k > 0.0) || !std::isfinite(c.k)) throw ConfigError("mixture scales must be > 0");
      if (!(c.weight >= 0.0)) throw ConfigError("mixture weights must be >= 0");
    }
    if (std::abs(mix[0].weight + mix[1].weight - 1.0) > 1e-9) {
      throw ConfigError("mixture weights must sum to 1");
    }
  } else if (!(k > 0.0) || !std::isfinite(k)) {
    throw ConfigError("noise scale K must be > 0");
  }
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("categorical temperature must lie in [0, 1)");
}

std::string NoiseSpec::to_string() const {
  std::string out;
  switch (real) {
    case RealNoise::kGaussian:
      out = "gauss:" + csv::format_double(k);
      break;
    case RealNoise::kLaplace:
      out = "laplace:" + csv::format_double(k);
      break;
    case RealNoise::kLogNormal:
      out = "lognorm:" + csv::format_double(k);
      break;
    case RealNoise::kGaussMix:
      out = "gmix:";
      for (std::size_t j = 0; j < 2; ++j) {
        if (j) out += ',';
        out += csv::format_double(mix[j].mean) + ',' + csv::format_double(mix[j].k) + ',' +
               csv::format_double(mix[j].weight);
      }
      break;
  }
  return out + ",cat:" + csv::format_double(beta);
}

NoiseSpec NoiseSpec::parse(const std::string& text) {
  // Tokens carrying "name:" open a clause; bare tokens continue the current one.
  std::vector<std::pair<std::string, std::vector<std::string>>> clauses;
  for (const auto& token : split(text, ',')) {
    if (token.empty()) throw ConfigError("empty field in noise spec '" + text + "'");
    const auto colon = token.find(':');
    if (colon != std::string::npos) {
      clauses.push_back({token.substr(0, colon), {token.substr(colon + 1)}});
    } else if (clauses.empty()) {
      throw ConfigError("noise spec '" + text + "' must start with a process name");
    } else {
      clauses.back().second.push_back(token);
    }
  }

  NoiseSpec spec;
  bool seen_real = false;
  bool seen_cat = false;
  for (const auto& [name, args] : clauses) {
    auto expect = [&](std::size_t n) {
      if (args.size() != n) {
        throw ConfigError("noise clause '" + name + "' takes " + std::to_string(n) +
                          " value(s), got " + std::to_string(args.size()));
      }
    };
    if (name == "cat") {
      if (seen_cat) throw ConfigError("duplicate cat clause in noise spec");
      seen_cat = true;
      expect(1);
      spec.beta = parse_number(args[0], name);
      continue;
    }
    if (seen_real) throw ConfigError("noise spec has more than one real process");
    seen_real = true;
    if (name == "gauss" || name == "laplace" || name == "lognorm") {
      expect(1);
      spec.real = name == "gauss"     ? RealNoise::kGaussian
                  : name == "laplace" ? RealNoise::kLaplace
                                      : RealNoise::kLogNormal;
      spec.k = parse_number(args[0], name);
    } else if (name == "gmix") {
      expect(6);
      spec.real = RealNoise::kGaussMix;
      for (std::size_t j = 0; j < 2; ++j) {
        spec.mix[j] = {parse_number(args[3 * j], name), parse_number(args[3 * j + 1], name),
                       parse_number(args[3 * j + 2], name)};
      }
    } else {
      throw ConfigError("unknown noise process '" + name +
                        "' (expected gauss, laplace, lognorm, gmix or cat)");
    }
  }
  spec.validate();
  return spec;
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

std::size_t features_per_row(std::size_t D, double feat_frac) {
  if (!(feat_frac > 0.0 && feat_frac <= 1.0)) {
    throw ConfigError("feature fraction must lie in (0, 1]");
  }
  return std::clamp<std::size_t>(round_half_up(feat_frac * static_cast<double>(D)), 1, D);
}

CellMask select_cells(std::size_t N, std::size_t D, double row_frac, double feat_frac, Rng& rng) {
  if (!(row_frac >= 0.0 && row_frac <= 1.0)) throw ConfigError("row fraction must lie in [0, 1]");
  const std::size_t per_row = features_per_row(D, feat_frac);
  CellMask mask(N * D, 0);
  const std::size_t n_rows = std::min(N, round_half_up(row_frac * static_cast<double>(N)));
  for (std::size_t n : choose_distinct(N, n_rows, rng)) {
    for (std::size_t d : choose_distinct(D, per_row, rng)) mask[n * D + d] = 1;
  }
  return mask;
}

double corrupt_real(double value, const NoiseSpec& spec, double sigma, Rng& rng) {
  switch (spec.real) {
    case RealNoise::kGaussian:
      return value + spec.k * sigma * rng.normal();
    case RealNoise::kLaplace:
      return value + spec.k * sigma * (rng.exponential() - rng.exponential());
    case RealNoise::kLogNormal:
      return value + std::exp(spec.k * sigma * rng.normal());
    case RealNoise::kGaussMix: {
      const auto& c = rng.uniform() < spec.mix[0].weight ? spec.mix[0] : spec.mix[1];
      return value + c.mean + c.k * sigma * rng.normal();
    }
  }
  return value;
}

std::vector<double> tempered_distribution(std::size_t clean, double beta,
                                          std::span<const double> marginal) {
  std::vector<double> p(marginal.size(), 0.0);
  double total = 0.0;
  for (std::size_t c = 0; c < marginal.size(); ++c) {
    if (c == clean) continue;
    p[c] = std::pow(marginal[c], beta);  // pow(0, 0) = 1
    total += p[c];
  }
  if (!(total > 0.0)) {
    throw DataError("no other category has marginal mass to corrupt into");
  }
  for (double& v : p) v /= total;
  return p;
}

std::size_t corrupt_categorical(std::size_t clean, double beta, std::span<const double> marginal,
                                Rng& rng) {
  if (marginal.size() < 2) throw ConfigError("categorical corruption needs at least 2 categories");
  const auto p = tempered_distribution(clean, beta, marginal);
  return rng.categorical(p);
}

void CorruptionRecord::write(std::ostream& out, const TableSchema& schema) const {
  const nlohmann::json header{{"seed", seed},
                              {"row_fraction", row_fraction},
                              {"feature_fraction", feature_fraction},
                              {"rows", rows},
                              {"columns", cols},
                              {"noise", noise}};
  out << "# " << header.dump() << '\n';
  csv::write_record(out, {"row", "column", "original_value"});
  for (const auto& cell : cells) {
    const auto& f = schema[cell.col];
    csv::write_record(out, {std::to_string(cell.row), f.name,
                            f.is_real() ? csv::format_double(cell.original)
                                        : f.categories[static_cast<std::size_t>(cell.original)]});
  }
}

CorruptionRecord CorruptionRecord::read(std::string_view text, const TableSchema& schema) {
  if (text.substr(0, 2) != "# ") throw IoError("corruption record lacks its '# {...}' header");
  const auto eol = text.find('\n');
  CorruptionRecord r;
  try {
    const auto header = nlohmann::json::parse(text.substr(2, eol == std::string_view::npos
                                                                  ? std::string_view::npos
                                                                  : eol - 2));
    r.seed = header.at("seed").get<std::uint64_t>();
    r.row_fraction = header.at("row_fraction").get<double>();
    r.feature_fraction = header.at("feature_fraction").get<double>();
    r.rows = header.at("rows").get<std::size_t>();
    r.cols = header.at("columns").get<std::size_t>();
    r.noise = header.at("noise").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed corruption record header: ") + e.what());
  }
  if (r.cols != schema.size()) {
    throw SchemaMismatch("corruption record has " + std::to_string(r.cols) +
                         " columns, schema has " + std::to_string(schema.size()));
  }
  r.mask.assign(r.rows * r.cols, 0);
  const auto records =
      csv::parse(eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1));
  if (records.empty() || records[0] != csv::Record{"row", "column", "original_value"}) {
    throw IoError("corruption record must have the header row,column,original_value");
  }
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    const std::string where = "corruption record line " + std::to_string(i + 1);
    if (rec.size() != 3) throw IoError(where + ": expected 3 fields");
    double row_value = 0.0;
    if (!csv::parse_double(rec[0], row_value) || row_value < 0 ||
        row_value != std::floor(row_value) || row_value >= static_cast<double>(r.rows)) {
      throw IoError(where + ": bad row index '" + rec[0] + "'");
    }
    const auto d = schema.index_of(rec[1]);
    if (!d) throw SchemaMismatch(where + ": unknown column '" + rec[1] + "'");
    CorruptedCell cell{static_cast<std::size_t>(row_value), *d, 0.0};
    if (schema[*d].is_real()) {
      if (!csv::parse_double(rec[2], cell.original)) {
        throw IoError(where + ": '" + rec[2] + "' is not a number");
      }
    } else {
      const auto c = schema[*d].category_index(rec[2]);
      if (!c) throw SchemaMismatch(where + ": unknown category '" + rec[2] + "'");
      cell.original = static_cast<double>(*c);
    }
    auto& flag = r.mask[cell.row * r.cols + cell.col];
    if (flag) throw IoError(where + ": duplicate cell");
    flag = 1;
    r.cells.push_back(cell);
  }
  std::sort(r.cells.begin(), r.cells.end(), [](const CorruptedCell& a, const CorruptedCell& b) {
    return std::pair(a.row, a.col) < std::pair(b.row, b.col);
  });
  return r;
}

void CorruptionRecord::save(const std::string& path, const TableSchema& schema) const {
  std::ostringstream out;
  write(out, schema);
  csv::write_text_file(path, out.str());
}

CorruptionRecord CorruptionRecord::load(const std::string& path, const TableSchema& schema) {
  return read(csv::read_text_file(path), schema);
}

Scenario make_scenario(const MixedTable& clean, double row_frac, const NoiseSpec& noise,
                       std::uint64_t seed, double feat_frac) {
  noise.validate();
  if (clean.standardized()) throw ConfigError("corruption is applied to raw, unstandardized tables");
  const auto& schema = clean.schema();
  const std::size_t N = clean.rows();
  const std::size_t D = clean.cols();

  Scenario s{clean, {}};
  CorruptionRecord& r = s.record;
  r.rows = N;
  r.cols = D;
  r.row_fraction = row_frac;
  r.feature_fraction = feat_frac;
  r.seed = seed;
  r.noise = noise.to_string();

  Rng select_rng(Rng::derive(seed, 0));
  r.mask = select_cells(N, D, row_frac, feat_frac, select_rng);

  const Standardization stats = compute_statistics(clean);
  std::vector<std::vector<double>> marginals(D);
  for (std::size_t d = 0; d < D; ++d) {
    if (!schema[d].is_categorical()) continue;
    marginals[d].assign(schema[d].cardinality(), 0.0);
    for (std::size_t n = 0; n < N; ++n) marginals[d][clean.category(n, d)] += 1.0;
    for (double& p : marginals[d]) p /= static_cast<double>(N);
  }

  Rng noise_rng(Rng::derive(seed, 1));
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t d = 0; d < D; ++d) {
      if (!r.masked(n, d)) continue;
      r.cells.push_back({n, d, clean.value(n, d)});
      if (schema[d].is_real()) {
        s.dirty.set_real(n, d, corrupt_real(clean.real(n, d), noise, stats.std_dev[d], noise_rng));
      } else {
        s.dirty.set_category(
            n, d, corrupt_categorical(clean.category(n, d), noise.beta, marginals[d], noise_rng));
      }
    }
  }
  return s;
}

MixedTable apply_originals(const MixedTable& dirty, const CorruptionRecord& record) {
  if (dirty.rows() != record.rows || dirty.cols() != record.cols) {
    throw SchemaMismatch("table shape does not match the corruption record");
  }
  MixedTable out = dirty;
  for (const auto& cell : record.cells) out.set_value(cell.row, cell.col, cell.original);
  return out;
}

}  // namespace rvae
