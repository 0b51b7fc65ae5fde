#include "rvae/scoring.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "rvae/error.h"

namespace rvae {

namespace {

constexpr std::size_t kBlockRows = 128;

// Stream ids used to decorrelate the stages of two-stage repair.
constexpr std::uint64_t kStageOneStream = 0x5157a6e1ULL;
constexpr std::uint64_t kStageTwoStream = 0x5157a6e2ULL;
constexpr std::uint64_t kMaskStream = 0x3a5c0001ULL;

template <typename Fn>
void for_each_block(std::size_t n_rows, std::size_t threads, Fn&& fn) {
  const std::size_t blocks = (n_rows + kBlockRows - 1) / kBlockRows;
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(blocks, 1));
  auto run = [&](std::size_t first) {
    for (std::size_t b = first; b < blocks; b += workers) {
      std::vector<std::size_t> rows;
      for (std::size_t n = b * kBlockRows; n < std::min(n_rows, (b + 1) * kBlockRows); ++n) {
        rows.push_back(n);
      }
      fn(rows);
    }
  };
  if (workers == 1) {
    run(0);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        run(t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<Rng> row_streams(std::uint64_t seed, const std::vector<std::size_t>& rows) {
  std::vector<Rng> rngs;
  rngs.reserve(rows.size());
  for (std::size_t n : rows) rngs.emplace_back(Rng::derive(seed, n));
  return rngs;
}

Matrix draw_noise(std::vector<Rng>& rngs, Eigen::Index K) {
  Matrix eps(static_cast<Eigen::Index>(rngs.size()), K);
  for (std::size_t i = 0; i < rngs.size(); ++i) {
    for (Eigen::Index k = 0; k < K; ++k) eps(static_cast<Eigen::Index>(i), k) = rngs[i].normal();
  }
  return eps;
}

MixedTable prepare(const RvaeModel& model, const MixedTable& table) {
  if (const auto diff = model.schema.describe_mismatch(table.schema()); !diff.empty()) {
    throw SchemaMismatch("table does not match model schema: " + diff);
  }
  if (!table.standardized()) return standardize_with(table, model.stats);
  if (*table.standardization() != model.stats) {
    throw DataError("table is standardized with statistics different from the model's");
  }
  return table;
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

// Shared pieces for the repair methods.
struct RepairSetup {
  MixedTable observed;
  OutputLayout layout;
  std::vector<double> real_sigma;  // by feature, 0 for categoricals

  RepairSetup(const RvaeModel& model, const MixedTable& table)
      : observed(prepare(model, table)), layout(model.schema), real_sigma(model.schema.size(), 0.0) {
    for (std::size_t d = 0; d < model.schema.size(); ++d) {
      if (layout.real_slot[d] >= 0) {
        real_sigma[d] = std::exp(clamp_log_sigma(model.params.log_sigma(0, layout.real_slot[d])));
      }
    }
  }
};

RepairResult empty_result(const RvaeModel& model, const MixedTable& observed, RepairMethod method) {
  RepairResult result;
  result.method = method;
  result.repaired = observed;
  result.simplex.resize(model.schema.size());
  for (std::size_t d = 0; d < model.schema.size(); ++d) {
    if (model.schema[d].is_categorical()) {
      result.simplex[d] = Matrix::Zero(static_cast<Eigen::Index>(observed.rows()),
                                       static_cast<Eigen::Index>(model.schema[d].cardinality()));
    }
  }
  return result;
}

// Writes the mode of p(x | z) for one row and records the categorical simplexes.
void write_mode(const RvaeModel& model, const RepairSetup& setup, const Matrix& out, Eigen::Index i,
                std::size_t n, RepairResult& result, const CellMask* clamp) {
  const auto& schema = model.schema;
  for (std::size_t d = 0; d < schema.size(); ++d) {
    const bool clamped = clamp && (*clamp)[n * schema.size() + d] != 0;
    const Eigen::Index off = setup.layout.offset[d];
    if (schema[d].is_real()) {
      result.repaired.set_real(n, d, clamped ? setup.observed.real(n, d) : out(i, off));
      continue;
    }
    const auto C = static_cast<Eigen::Index>(schema[d].cardinality());
    Vector p;
    if (clamped) {
      p = one_hot(setup.observed.category(n, d), schema[d].cardinality());
    } else {
      p = softmax(out.block(i, off, 1, C).transpose());
    }
    result.simplex[d].row(static_cast<Eigen::Index>(n)) = p.transpose();
    result.repaired.set_category(n, d, static_cast<std::size_t>(argmax(p)));
  }
}

// Runs `iters` rounds of encode -> sample z -> decode on `state` for the
// given rows, sampling x between rounds. Cells flagged in `clamp` keep their
// observed values; cells flagged in `mean_init` enter the first encoding as
// mean behaviour. Returns the decoder outputs and latents of the final round.
void run_chain(const RvaeModel& model, const RepairSetup& setup, MixedTable& state,
               const std::vector<std::size_t>& rows, const CellMask* clamp,
               const CellMask* mean_init, int iters, std::vector<Rng>& rngs, Matrix& final_out,
               Matrix& final_z) {
  const auto& schema = model.schema;
  const auto K = static_cast<Eigen::Index>(model.params.latent());
  for (int t = 0; t < iters; ++t) {
    const Matrix x = encode_rows(state, rows, model.params.embeddings, t == 0 ? mean_init : nullptr);
    const Posterior post = encode_posterior(model.params, x);
    final_z = post.mean + post.std_dev.cwiseProduct(draw_noise(rngs, K));
    final_out = decode_outputs(model.params, final_z);
    if (t + 1 == iters) break;  // the last round only needs p(x | z)
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t n = rows[i];
      const auto r = static_cast<Eigen::Index>(i);
      for (std::size_t d = 0; d < schema.size(); ++d) {
        if (clamp && (*clamp)[n * schema.size() + d] != 0) continue;
        const Eigen::Index off = setup.layout.offset[d];
        if (schema[d].is_real()) {
          state.set_real(n, d, final_out(r, off) + setup.real_sigma[d] * rngs[i].normal());
        } else {
          const auto C = static_cast<Eigen::Index>(schema[d].cardinality());
          const Vector p = softmax(final_out.block(r, off, 1, C).transpose());
          state.set_category(n, d, rngs[i].categorical(std::span<const double>(p.data(), p.size())));
        }
      }
    }
  }
}

}  // namespace

std::string to_string(ScoreRule rule) { return rule == ScoreRule::kNll ? "nll" : "pi"; }

ScoreRule parse_score_rule(const std::string& text) {
  if (text == "nll") return ScoreRule::kNll;
  if (text == "pi") return ScoreRule::kPi;
  throw ConfigError("unknown score rule '" + text + "' (expected nll or pi)");
}

std::string to_string(RepairMethod method) {
  switch (method) {
    case RepairMethod::kMap:
      return "map";
    case RepairMethod::kOneStage:
      return "one-stage";
    case RepairMethod::kTwoStage:
      return "two-stage";
    case RepairMethod::kMarginal:
      return "marginal";
  }
  return "?";
}

RepairMethod parse_repair_method(const std::string& text) {
  if (text == "map") return RepairMethod::kMap;
  if (text == "one-stage") return RepairMethod::kOneStage;
  if (text == "two-stage") return RepairMethod::kTwoStage;
  throw ConfigError("unknown repair method '" + text + "' (expected map, one-stage or two-stage)");
}

ScoreReport score(const RvaeModel& model, const MixedTable& table, ScoreRule rule,
                  const ScoreOptions& options) {
  if (rule == ScoreRule::kPi && model.kind() == ModelKind::kVae) {
    throw UnsupportedOperation("the pi rule is undefined for a plain VAE model");
  }
  const MixedTable observed = prepare(model, table);
  const auto N = static_cast<Eigen::Index>(observed.rows());
  const auto D = static_cast<Eigen::Index>(observed.cols());
  const auto K = static_cast<Eigen::Index>(model.params.latent());
  const double logit_alpha = logit(model.config.alpha);
  const OutlierModel outliers = model.outliers();

  ScoreReport report;
  report.rule = rule;
  report.cell = Matrix::Zero(N, D);
  for_each_block(observed.rows(), options.threads, [&](const std::vector<std::size_t>& rows) {
    auto rngs = row_streams(options.seed, rows);
    const Matrix x = encode_rows(observed, rows, model.params.embeddings);
    Matrix cell;
    if (rule == ScoreRule::kPi && model.kind() == ModelKind::kRvaeAvi) {
      const Matrix u = model.params.pi_encoder->predict(x);
      cell = u.unaryExpr([](double v) { return softplus(-v); });
    } else {
      const Posterior post = encode_posterior(model.params, x);
      const Matrix z = post.mean + post.std_dev.cwiseProduct(draw_noise(rngs, K));
      const Matrix ll = clean_log_lik(model.params, observed, rows, decode_outputs(model.params, z));
      if (rule == ScoreRule::kNll) {
        cell = -ll;
      } else {
        const Matrix l0 = outlier_log_lik(observed, rows, outliers);
        cell = Matrix(ll.rows(), ll.cols());
        for (Eigen::Index i = 0; i < ll.rows(); ++i) {
          for (Eigen::Index d = 0; d < ll.cols(); ++d) {
            const double r = std::clamp(ll(i, d) - l0(i, d), -kPiLogRatioClamp, kPiLogRatioClamp);
            cell(i, d) = softplus(-(r + logit_alpha));  // -log sigmoid(.)
          }
        }
      }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      report.cell.row(static_cast<Eigen::Index>(rows[i])) = cell.row(static_cast<Eigen::Index>(i));
    }
  });
  report.row = report.cell.rowwise().sum();
  return report;
}

Matrix infer_gates(const RvaeModel& model, const MixedTable& table, const ScoreOptions& options) {
  const ScoreReport report = score(model, table, ScoreRule::kPi, options);
  return (-report.cell).array().exp().matrix();
}

RepairResult repair_map(const RvaeModel& model, const MixedTable& table, const RepairOptions& options) {
  const RepairSetup setup(model, table);
  RepairResult result = empty_result(model, setup.observed, RepairMethod::kMap);
  const auto K = static_cast<Eigen::Index>(model.params.latent());
  for_each_block(setup.observed.rows(), options.threads, [&](const std::vector<std::size_t>& rows) {
    const Matrix x = encode_rows(setup.observed, rows, model.params.embeddings);
    const Posterior post = encode_posterior(model.params, x);
    Matrix z = post.mean;
    if (options.sample_latent) {
      auto rngs = row_streams(options.seed, rows);
      z += post.std_dev.cwiseProduct(draw_noise(rngs, K));
    }
    const Matrix out = decode_outputs(model.params, z);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      write_mode(model, setup, out, static_cast<Eigen::Index>(i), rows[i], result, nullptr);
    }
  });
  return result;
}

RepairResult repair_one_stage(const RvaeModel& model, const MixedTable& table,
                              const RepairOptions& options, const CellMask* mean_init) {
  if (options.gibbs_iters < 1) throw ConfigError("pseudo-Gibbs iterations must be >= 1");
  if (model.kind() == ModelKind::kVae) {
    throw UnsupportedOperation("pseudo-Gibbs repair needs an RVAE model");
  }
  const RepairSetup setup(model, table);
  RepairResult result = empty_result(model, setup.observed, RepairMethod::kOneStage);
  result.pi = Matrix::Zero(static_cast<Eigen::Index>(setup.observed.rows()),
                           static_cast<Eigen::Index>(setup.observed.cols()));
  MixedTable state = setup.observed;
  const OutlierModel outliers = model.outliers();
  for_each_block(setup.observed.rows(), options.threads, [&](const std::vector<std::size_t>& rows) {
    auto rngs = row_streams(options.seed, rows);
    Matrix out, z;
    run_chain(model, setup, state, rows, nullptr, mean_init, options.gibbs_iters, rngs, out, z);
    const Matrix ll = clean_log_lik(model.params, setup.observed, rows, out);
    const Matrix pi = gate_probabilities(ll, outlier_log_lik(setup.observed, rows, outliers),
                                         model.config.alpha);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t n = rows[i];
      const auto r = static_cast<Eigen::Index>(i);
      result.pi.row(static_cast<Eigen::Index>(n)) = pi.row(r);
      write_mode(model, setup, out, r, n, result, nullptr);
    }
  });
  return result;
}

RepairResult repair_two_stage_with_gates(const RvaeModel& model, const MixedTable& table,
                                         const Matrix& pi, const RepairOptions& options) {
  if (options.gibbs_iters < 1) throw ConfigError("pseudo-Gibbs iterations must be >= 1");
  if (model.kind() == ModelKind::kVae) {
    throw UnsupportedOperation("pseudo-Gibbs repair needs an RVAE model");
  }
  const RepairSetup setup(model, table);
  const std::size_t N = setup.observed.rows();
  const std::size_t D = setup.observed.cols();
  if (pi.rows() != static_cast<Eigen::Index>(N) || pi.cols() != static_cast<Eigen::Index>(D)) {
    throw DataError("gate matrix must be N x D");
  }

  // w = 1: clamp to the observed value; w = 0: start from mean behaviour.
  CellMask clamp(N * D, 0);
  CellMask mean_init(N * D, 0);
  for (std::size_t n = 0; n < N; ++n) {
    Rng rng(Rng::derive(Rng::derive(options.seed, kMaskStream), n));
    for (std::size_t d = 0; d < D; ++d) {
      const bool clean = rng.bernoulli(pi(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)));
      clamp[n * D + d] = clean ? 1 : 0;
      mean_init[n * D + d] = clean ? 0 : 1;
    }
  }

  RepairResult result = empty_result(model, setup.observed, RepairMethod::kTwoStage);
  result.pi = pi;
  MixedTable state = setup.observed;
  for_each_block(N, options.threads, [&](const std::vector<std::size_t>& rows) {
    auto rngs = row_streams(options.seed, rows);
    Matrix out, z;
    run_chain(model, setup, state, rows, &clamp, &mean_init, options.gibbs_iters, rngs, out, z);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t n = rows[i];
      write_mode(model, setup, out, static_cast<Eigen::Index>(i), n, result, &clamp);
    }
  });
  return result;
}

RepairResult repair_two_stage(const RvaeModel& model, const MixedTable& table,
                              const RepairOptions& options) {
  RepairOptions first = options;
  first.seed = Rng::derive(options.seed, kStageOneStream);
  const RepairResult stage_one = repair_one_stage(model, table, first);
  RepairOptions second = options;
  second.seed = Rng::derive(options.seed, kStageTwoStream);
  return repair_two_stage_with_gates(model, table, stage_one.pi, second);
}

}  // namespace rvae
