#include "rvae/baselines.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <numbers>
#include <thread>

#include "rvae/error.h"

namespace rvae {

namespace {

constexpr const char* kMarginalKind = "marginal-model";

double component_log_density(double x, double w, double m, double s) {
  const double u = (x - m) / s;
  return std::log(w) - std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * u * u;
}

MixedTable standardized_input(const MixedTable& table) {
  return table.standardized() ? table : standardize(table);
}

// k-means++ seeding followed by one hard assignment.
Gmm1d initialize(std::span<const double> x, std::size_t k, Rng& rng, double global_std,
                 double floor) {
  const std::size_t N = x.size();
  std::vector<double> centers{x[rng.uniform_index(N)]};
  std::vector<double> dist(N);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (x[n] - c) * (x[n] - c));
      dist[n] = best;
      total += best;
    }
    centers.push_back(total > 0.0 ? x[rng.categorical(dist)] : x[rng.uniform_index(N)]);
  }

  std::vector<double> count(k, 0.0), sum(k, 0.0), sq(k, 0.0);
  for (double v : x) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (std::abs(v - centers[j]) < std::abs(v - centers[best])) best = j;
    }
    count[best] += 1.0;
    sum[best] += v;
    sq[best] += v * v;
  }
  Gmm1d g;
  for (std::size_t j = 0; j < k; ++j) {
    const double c = std::max(count[j], 1.0);
    const double mean = count[j] > 0.0 ? sum[j] / c : centers[j];
    const double var = count[j] > 1.0 ? sq[j] / c - mean * mean : global_std * global_std;
    g.weight.push_back(c / static_cast<double>(N + k));
    g.mean.push_back(mean);
    g.std_dev.push_back(std::max(std::sqrt(std::max(var, 0.0)), floor));
  }
  const double wsum = std::accumulate(g.weight.begin(), g.weight.end(), 0.0);
  for (double& w : g.weight) w /= wsum;
  return g;
}

}  // namespace

double Gmm1d::log_density(double x) const {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(components());
  for (std::size_t j = 0; j < components(); ++j) {
    terms[j] = component_log_density(x, weight[j], mean[j], std_dev[j]);
    best = std::max(best, terms[j]);
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - best);
  return best + std::log(acc);
}

std::size_t Gmm1d::most_responsible(double x) const {
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < components(); ++j) {
    const double v = component_log_density(x, weight[j], mean[j], std_dev[j]);
    if (v > best_value) {
      best_value = v;
      best = j;
    }
  }
  return best;
}

double Gmm1d::bic(std::size_t n) const {
  return -2.0 * log_lik +
         static_cast<double>(3 * components() - 1) * std::log(static_cast<double>(n));
}

Gmm1d fit_gmm(std::span<const double> x, std::size_t k, Rng& rng, const GmmOptions& options,
              std::vector<double>* trace) {
  const std::size_t N = x.size();
  if (N < 2) throw DataError("a mixture needs at least 2 values");
  if (k < 1) throw ConfigError("a mixture needs at least one component");
  double mean = 0.0, sq = 0.0;
  for (double v : x) {
    mean += v;
    sq += v * v;
  }
  mean /= static_cast<double>(N);
  const double global_std =
      std::max(std::sqrt(std::max(sq / static_cast<double>(N) - mean * mean, 0.0)), options.std_floor);

  Gmm1d g = initialize(x, k, rng, global_std, options.std_floor);
  const auto K = static_cast<Eigen::Index>(k);
  const Eigen::Map<const Eigen::ArrayXd> xs(x.data(), static_cast<Eigen::Index>(N));
  Eigen::ArrayXXd resp(static_cast<Eigen::Index>(N), K);
  double prev = -std::numeric_limits<double>::infinity();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (int iter = 0; iter < options.max_iters; ++iter) {
    // E-step; the log-likelihood is that of the current parameters.
    for (Eigen::Index j = 0; j < K; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      const double inv = 1.0 / g.std_dev[jj];
      const double offset = std::log(g.weight[jj]) - std::log(g.std_dev[jj]) - half_log_2pi;
      resp.col(j) = offset - 0.5 * ((xs - g.mean[jj]) * inv).square();
    }
    const Eigen::ArrayXd best = resp.rowwise().maxCoeff();
    resp.colwise() -= best;
    resp = resp.max(-700.0).exp();  // avoids denormals
    const Eigen::ArrayXd total = resp.rowwise().sum();
    resp.colwise() /= total;
    const double ll = (best + total.log()).sum();
    g.log_lik = ll;
    if (trace) trace->push_back(ll);
    if (std::abs(ll - prev) / static_cast<double>(N) < options.tolerance) break;
    prev = ll;

    // M-step.
    const Eigen::ArrayXd nk = resp.colwise().sum().transpose();
    const Eigen::ArrayXd s1 = (resp.colwise() * xs).colwise().sum().transpose();
    for (Eigen::Index j = 0; j < K; ++j) {
      if (nk(j) < 1e-12) continue;  // empty component keeps its parameters
      const auto jj = static_cast<std::size_t>(j);
      const double m = s1(j) / nk(j);
      const double s2 = (resp.col(j) * (xs - m).square()).sum();
      g.weight[jj] = nk(j) / static_cast<double>(N);
      g.mean[jj] = m;
      g.std_dev[jj] = std::max(std::sqrt(s2 / nk(j)), options.std_floor);
    }
    const double wsum = std::accumulate(g.weight.begin(), g.weight.end(), 0.0);
    for (double& w : g.weight) w /= wsum;
  }
  return g;
}

Gmm1d select_gmm(std::span<const double> x, const GmmOptions& options) {
  if (options.max_components < 1) throw ConfigError("max_components must be >= 1");
  Gmm1d best;
  double best_bic = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= options.max_components; ++k) {
    const std::size_t restarts = k <= 5 ? options.restarts_small : options.restarts_large;
    for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
      Rng rng(Rng::derive(options.seed, k * 1000 + r));
      Gmm1d g = fit_gmm(x, k, rng, options);
      const double b = g.bic(x.size());
      if (b < best_bic) {
        best_bic = b;
        best = std::move(g);
      }
    }
  }
  return best;
}

double MarginalModel::category_probability(std::size_t d, std::size_t c) const {
  const double p = frequency[d][c];
  if (p > 0.0) return p;
  return 1.0 / static_cast<double>(rows + frequency[d].size());
}

MarginalModel fit_marginals(const MixedTable& table, const GmmOptions& options,
                            std::size_t threads) {
  if (table.rows() < 2) throw DataError("the marginal baseline needs at least 2 rows");
  const MixedTable data = standardized_input(table);
  const auto& schema = data.schema();
  const std::size_t N = data.rows();
  const std::size_t D = data.cols();

  MarginalModel model;
  model.schema = schema;
  model.stats = *data.standardization();
  model.rows = N;
  model.gmm.resize(D);
  model.frequency.resize(D);

  std::vector<std::size_t> real_features;
  for (std::size_t d = 0; d < D; ++d) {
    if (schema[d].is_real()) {
      real_features.push_back(d);
      continue;
    }
    auto& f = model.frequency[d];
    f.assign(schema[d].cardinality(), 0.0);
    for (std::size_t n = 0; n < N; ++n) f[data.category(n, d)] += 1.0;
    for (double& p : f) p /= static_cast<double>(N);
  }

  auto fit_feature = [&](std::size_t d) {
    std::vector<double> x(N);
    for (std::size_t n = 0; n < N; ++n) x[n] = data.real(n, d);
    GmmOptions o = options;
    o.seed = Rng::derive(options.seed, d);
    model.gmm[d] = select_gmm(x, o);
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(real_features.size(), 1));
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < real_features.size(); i += workers) fit_feature(real_features[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return model;
}

ScoreReport marginal_score(const MarginalModel& model, const MixedTable& table) {
  if (const auto diff = model.schema.describe_mismatch(table.schema()); !diff.empty()) {
    throw SchemaMismatch("table does not match the marginal model: " + diff);
  }
  const MixedTable data = table.standardized() ? table : standardize_with(table, model.stats);
  const auto N = static_cast<Eigen::Index>(data.rows());
  const auto D = static_cast<Eigen::Index>(data.cols());
  ScoreReport report;
  report.rule = ScoreRule::kNll;
  report.cell = Matrix(N, D);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index d = 0; d < D; ++d) {
      const auto nn = static_cast<std::size_t>(n);
      const auto dd = static_cast<std::size_t>(d);
      report.cell(n, d) = model.schema[dd].is_real()
                              ? -model.gmm[dd].log_density(data.real(nn, dd))
                              : -std::log(model.category_probability(dd, data.category(nn, dd)));
    }
  }
  report.row = report.cell.rowwise().sum();
  return report;
}

RepairResult marginal_repair(const MarginalModel& model, const MixedTable& table,
                             const CellMask* mask) {
  if (const auto diff = model.schema.describe_mismatch(table.schema()); !diff.empty()) {
    throw SchemaMismatch("table does not match the marginal model: " + diff);
  }
  const MixedTable data = table.standardized() ? table : standardize_with(table, model.stats);
  const std::size_t N = data.rows();
  const std::size_t D = data.cols();
  if (mask && mask->size() != N * D) throw DataError("repair mask does not match the table");

  RepairResult result;
  result.method = RepairMethod::kMarginal;
  result.repaired = data;
  result.simplex.resize(D);
  for (std::size_t d = 0; d < D; ++d) {
    const auto& spec = model.schema[d];
    Eigen::Index modal = 0;
    Vector freq;
    if (spec.is_categorical()) {
      freq = Eigen::Map<const Vector>(model.frequency[d].data(),
                                      static_cast<Eigen::Index>(model.frequency[d].size()));
      modal = argmax(freq);
      result.simplex[d] = Matrix::Zero(static_cast<Eigen::Index>(N), freq.size());
    }
    for (std::size_t n = 0; n < N; ++n) {
      const bool flagged = !mask || (*mask)[n * D + d] != 0;
      const auto r = static_cast<Eigen::Index>(n);
      if (spec.is_real()) {
        if (flagged) {
          const Gmm1d& g = model.gmm[d];
          result.repaired.set_real(n, d, g.mean[g.most_responsible(data.real(n, d))]);
        }
        continue;
      }
      if (flagged) {
        result.repaired.set_category(n, d, static_cast<std::size_t>(modal));
        result.simplex[d].row(r) = freq.transpose();
      } else {
        result.simplex[d](r, static_cast<Eigen::Index>(data.category(n, d))) = 1.0;
      }
    }
  }
  return result;
}

Container to_container(const MarginalModel& model) {
  Container c;
  c.metadata = {{"kind", kMarginalKind}, {"schema", model.schema.to_json()}, {"rows", model.rows}};
  for (std::size_t d = 0; d < model.schema.size(); ++d) {
    const auto& name = model.schema[d].name;
    if (model.schema[d].is_real()) {
      const Gmm1d& g = model.gmm[d];
      Matrix m(static_cast<Eigen::Index>(g.components()), 3);
      for (std::size_t j = 0; j < g.components(); ++j) {
        m.row(static_cast<Eigen::Index>(j)) << g.weight[j], g.mean[j], g.std_dev[j];
      }
      c.tensors.push_back({"gmm." + name, m});
    } else {
      const auto& f = model.frequency[d];
      c.tensors.push_back(
          {"frequency." + name,
           Eigen::Map<const Matrix>(f.data(), 1, static_cast<Eigen::Index>(f.size()))});
    }
  }
  const auto D = static_cast<Eigen::Index>(model.schema.size());
  c.tensors.push_back({"standardization.mean", Eigen::Map<const Matrix>(model.stats.mean.data(), 1, D)});
  c.tensors.push_back({"standardization.std", Eigen::Map<const Matrix>(model.stats.std_dev.data(), 1, D)});
  return c;
}

MarginalModel marginal_from_container(const Container& container) {
  if (container_kind(container) != kMarginalKind) {
    throw IoError("checkpoint does not hold a marginal baseline model");
  }
  MarginalModel model;
  try {
    model.schema = TableSchema::from_json(container.metadata.at("schema"));
    model.rows = container.metadata.at("rows").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed marginal model metadata: ") + e.what());
  }
  const std::size_t D = model.schema.size();
  model.gmm.resize(D);
  model.frequency.resize(D);
  for (std::size_t d = 0; d < D; ++d) {
    const auto& spec = model.schema[d];
    if (spec.is_real()) {
      const Matrix& m = container.tensor("gmm." + spec.name);
      if (m.cols() != 3 || m.rows() < 1) throw IoError("mixture tensor for '" + spec.name + "' is malformed");
      for (Eigen::Index j = 0; j < m.rows(); ++j) {
        model.gmm[d].weight.push_back(m(j, 0));
        model.gmm[d].mean.push_back(m(j, 1));
        model.gmm[d].std_dev.push_back(m(j, 2));
      }
    } else {
      const Matrix& f = container.tensor("frequency." + spec.name);
      if (f.size() != static_cast<Eigen::Index>(spec.cardinality())) {
        throw IoError("frequency tensor for '" + spec.name + "' has the wrong size");
      }
      model.frequency[d].assign(f.data(), f.data() + f.size());
    }
  }
  const Matrix& mean = container.tensor("standardization.mean");
  const Matrix& sd = container.tensor("standardization.std");
  if (mean.size() != static_cast<Eigen::Index>(D) || sd.size() != mean.size()) {
    throw IoError("standardization tensors have the wrong shape");
  }
  model.stats.mean.assign(mean.data(), mean.data() + mean.size());
  model.stats.std_dev.assign(sd.data(), sd.data() + sd.size());
  return model;
}

void save_marginal(const MarginalModel& model, const std::string& path) {
  write_container(path, to_container(model));
}

MarginalModel load_marginal(const std::string& path) {
  return marginal_from_container(read_container(path));
}

std::string container_kind(const Container& container) {
  if (!container.metadata.is_object()) return {};
  return container.metadata.value("kind", std::string());
}

}  // namespace rvae
