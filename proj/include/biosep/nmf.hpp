#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "biosep/error.hpp"
#include "biosep/rng.hpp"
#include "json.hpp"

namespace biosep {

struct NmfConfig {
  int rank = 4;
  int max_iters = 500;
  double rel_tol = 1e-5;   // stop once one iteration improves D by less than this fraction
  double epsilon = 1e-12;  // floor for denominators and for (WH) inside the divergence
  std::uint64_t seed = 0;

  void validate() const {
    if (rank < 1) throw Error(ErrorCode::InvalidConfig, "rank must be >= 1");
    if (max_iters < 1) throw Error(ErrorCode::InvalidConfig, "max_iters must be >= 1");
    if (!(rel_tol >= 0.0)) throw Error(ErrorCode::InvalidConfig, "rel_tol must be >= 0");
    if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidConfig, "epsilon must be > 0");
  }
};

struct Factors {
  Eigen::MatrixXd W;  // m x r, mixing matrix (spectral bases)
  Eigen::MatrixXd H;  // r x n, source activations over time
};

/// Result of factorize. divergence_trace[0] is the divergence of the initial
/// factors; entry k is the divergence after k multiplicative-update steps.
struct NmfModel {
  Eigen::MatrixXd W;
  Eigen::MatrixXd H;
  int rank = 0;
  std::vector<double> divergence_trace;
  std::uint64_t seed = 0;

  int iterations() const noexcept { return static_cast<int>(divergence_trace.size()) - 1; }
  double final_divergence() const { return divergence_trace.back(); }
  Eigen::MatrixXd reconstruction() const { return W * H; }
};

namespace detail {

inline void check_shapes(const Eigen::MatrixXd& V, const Eigen::MatrixXd& W,
                         const Eigen::MatrixXd& H) {
  if (W.rows() != V.rows() || H.cols() != V.cols() || W.cols() != H.rows()) {
    throw Error(ErrorCode::ShapeMismatch,
                "V " + std::to_string(V.rows()) + "x" + std::to_string(V.cols()) + ", W " +
                    std::to_string(W.rows()) + "x" + std::to_string(W.cols()) + ", H " +
                    std::to_string(H.rows()) + "x" + std::to_string(H.cols()));
  }
}

}  // namespace detail

/// Draws W (m x r) then H (r x n), row-major, uniformly from (0, 1]. When
/// target_mean is given both factors are scaled by the same factor so that
/// mean(W*H) equals it.
inline Factors init_factors(Eigen::Index m, Eigen::Index n, const NmfConfig& config,
                            std::optional<double> target_mean = std::nullopt) {
  config.validate();
  if (m < 1 || n < 1) throw Error(ErrorCode::ShapeMismatch, "init_factors needs m, n >= 1");
  Rng rng(config.seed);
  Factors f{Eigen::MatrixXd(m, config.rank), Eigen::MatrixXd(config.rank, n)};
  for (Eigen::Index i = 0; i < f.W.rows(); ++i)
    for (Eigen::Index k = 0; k < f.W.cols(); ++k) f.W(i, k) = rng.uniform_open_closed();
  for (Eigen::Index k = 0; k < f.H.rows(); ++k)
    for (Eigen::Index j = 0; j < f.H.cols(); ++j) f.H(k, j) = rng.uniform_open_closed();

  if (target_mean && *target_mean > 0.0) {
    const double current = (f.W * f.H).mean();
    const double scale = std::sqrt(*target_mean / current);
    f.W *= scale;
    f.H *= scale;
  }
  return f;
}

/// Generalized KL divergence D(V || WH) with 0*log(0/x) = 0 and (WH)
/// floored at epsilon.
inline double kl_divergence(const Eigen::MatrixXd& V, const Eigen::MatrixXd& W,
                            const Eigen::MatrixXd& H, double epsilon = 1e-12) {
  detail::check_shapes(V, W, H);
  const Eigen::MatrixXd WH = W * H;
  double total = 0.0;
  for (Eigen::Index j = 0; j < V.cols(); ++j) {
    for (Eigen::Index i = 0; i < V.rows(); ++i) {
      const double v = V(i, j);
      const double model = std::max(WH(i, j), epsilon);
      total += (v > 0.0 ? v * std::log(v / model) : 0.0) - v + model;
    }
  }
  return total;
}

/// One multiplicative-update step for the KL objective, H first:
///   H <- H .* (W^T (V ./ WH)) ./ (W^T 1)
///   W <- W .* ((V ./ WH) H^T) ./ (1 H^T)
/// with WH recomputed between the two updates.
inline Factors mu_step(const Eigen::MatrixXd& V, const Eigen::MatrixXd& W,
                       const Eigen::MatrixXd& H, double epsilon = 1e-12) {
  detail::check_shapes(V, W, H);

  const Eigen::MatrixXd ratio_h = V.cwiseQuotient((W * H).cwiseMax(epsilon));
  const Eigen::VectorXd w_mass = W.colwise().sum().transpose().cwiseMax(epsilon);
  Eigen::MatrixXd H_next = H.cwiseProduct(W.transpose() * ratio_h);
  H_next.array().colwise() /= w_mass.array();

  const Eigen::MatrixXd ratio_w = V.cwiseQuotient((W * H_next).cwiseMax(epsilon));
  const Eigen::RowVectorXd h_mass = H_next.rowwise().sum().transpose().cwiseMax(epsilon);
  Eigen::MatrixXd W_next = W.cwiseProduct(ratio_w * H_next.transpose());
  W_next.array().rowwise() /= h_mass.array();

  return {std::move(W_next), std::move(H_next)};
}

/// Factorizes V ~= W H by KL multiplicative updates until max_iters or until an
/// iteration improves the divergence by less than rel_tol (relative).
inline NmfModel factorize(const Eigen::MatrixXd& V, const NmfConfig& config) {
  config.validate();
  if (V.rows() < 1 || V.cols() < 1) throw Error(ErrorCode::EmptyInput, "V has no entries");
  for (Eigen::Index j = 0; j < V.cols(); ++j) {
    for (Eigen::Index i = 0; i < V.rows(); ++i) {
      if (!std::isfinite(V(i, j)) || V(i, j) < 0.0) {
        throw Error(ErrorCode::InvalidInput, "V must be finite and non-negative");
      }
    }
  }
  if (!(V.sum() > 0.0)) throw Error(ErrorCode::EmptyInput, "V is all zeros");

  Factors f = init_factors(V.rows(), V.cols(), config, V.mean());
  NmfModel model;
  model.rank = config.rank;
  model.seed = config.seed;
  model.divergence_trace.reserve(static_cast<std::size_t>(config.max_iters) + 1);
  model.divergence_trace.push_back(kl_divergence(V, f.W, f.H, config.epsilon));

  for (int iter = 0; iter < config.max_iters; ++iter) {
    f = mu_step(V, f.W, f.H, config.epsilon);
    const double previous = model.divergence_trace.back();
    const double current = kl_divergence(V, f.W, f.H, config.epsilon);
    model.divergence_trace.push_back(current);
    if (current <= 0.0) break;
    if ((previous - current) / previous < config.rel_tol) break;
  }
  model.W = std::move(f.W);
  model.H = std::move(f.H);
  return model;
}

// JSON document used by `separate --save-model`.

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows) {
  if (!rows.is_array()) throw Error(ErrorCode::InvalidInput, "matrix must be an array of rows");
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = r == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.at(0).size());
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = rows.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) {
      throw Error(ErrorCode::ShapeMismatch, "ragged matrix rows");
    }
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = row.at(static_cast<std::size_t>(j)).get<double>();
  }
  return m;
}

inline nlohmann::json to_json(const NmfModel& model) {
  return nlohmann::json{{"rank", model.rank},
                        {"seed", model.seed},
                        {"W", matrix_to_json(model.W)},
                        {"H", matrix_to_json(model.H)},
                        {"divergence_trace", model.divergence_trace}};
}

inline NmfModel model_from_json(const nlohmann::json& doc) {
  NmfModel model;
  try {
    model.rank = doc.at("rank").get<int>();
    model.seed = doc.at("seed").get<std::uint64_t>();
    model.W = matrix_from_json(doc.at("W"));
    model.H = matrix_from_json(doc.at("H"));
    model.divergence_trace = doc.at("divergence_trace").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidInput, std::string("model JSON: ") + e.what());
  }
  if (model.W.cols() != model.rank || model.H.rows() != model.rank) {
    throw Error(ErrorCode::ShapeMismatch, "model factors do not match rank");
  }
  return model;
}

}  // namespace biosep
