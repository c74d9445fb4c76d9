#ifndef LORENZLAB_SVM_HPP
#define LORENZLAB_SVM_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "lorenzlab/lorenz.hpp"

namespace lorenzlab {

/// Gaussian RBF kernel exp(-sigma^2 ||u - v||^2); sigma acts as an
/// inverse width.
inline double rbf_kernel(const Eigen::VectorXd& u, const Eigen::VectorXd& v, double sigma) {
    if (u.size() != v.size()) throw std::invalid_argument("rbf_kernel: dimension mismatch");
    return std::exp(-sigma * sigma * (u - v).squaredNorm());
}

/// Pairwise squared Euclidean distances between rows of A and rows of B.
inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    Eigen::VectorXd a2 = A.rowwise().squaredNorm();
    Eigen::VectorXd b2 = B.rowwise().squaredNorm();
    Eigen::MatrixXd d = a2.replicate(1, B.rows()) + b2.transpose().replicate(A.rows(), 1) -
                        2.0 * A * B.transpose();
    return d.cwiseMax(0.0);
}

inline Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& X, double sigma) {
    if (X.rows() == 0) throw std::invalid_argument("kernel_matrix: empty input set");
    Eigen::MatrixXd K = (-sigma * sigma * squared_distances(X, X)).array().exp();
    K.diagonal().setOnes();
    return 0.5 * (K + K.transpose());
}

/// Per-dimension affine map sending the fitting range to [-1, 1];
/// zero-range dimensions map to the constant 0.
struct ScalingTransform {
    Eigen::VectorXd offset;  // range midpoint
    Eigen::VectorXd gain;    // 2 / (max - min), 0 for degenerate dims

    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
        return (X.rowwise() - offset.transpose()) * gain.asDiagonal();
    }
    Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        return gain.cwiseProduct(v - offset);
    }
    Eigen::VectorXd invert(const Eigen::VectorXd& v) const {
        Eigen::VectorXd out = offset;
        for (Eigen::Index i = 0; i < v.size(); ++i)
            if (gain[i] != 0.0) out[i] += v[i] / gain[i];
        return out;
    }
};

inline ScalingTransform fit_scaling(const Eigen::MatrixXd& X) {
    ScalingTransform t;
    Eigen::VectorXd lo = X.colwise().minCoeff();
    Eigen::VectorXd hi = X.colwise().maxCoeff();
    t.offset = 0.5 * (lo + hi);
    t.gain = Eigen::VectorXd::Zero(X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i)
        if (hi[i] > lo[i]) t.gain[i] = 2.0 / (hi[i] - lo[i]);
    return t;
}

/// inputs row i: M consecutive observations (3M reals) ending at time t;
/// target row i: the observation T_f steps later.
struct EmbeddedDataset {
    Eigen::MatrixXd inputs;   // n x 3M
    Eigen::MatrixXd targets;  // n x 3
    std::size_t embed_len = 1;  // M
    std::size_t horizon = 1;    // T_f
};

inline EmbeddedDataset delay_embed(std::span<const Vec3> obs, std::size_t M, std::size_t T_f) {
    if (M < 1) throw std::invalid_argument("embedding length must be >= 1");
    if (obs.size() < M + T_f) throw std::invalid_argument("series too short for embedding");
    const std::size_t n = obs.size() - M - T_f + 1;
    EmbeddedDataset d;
    d.embed_len = M;
    d.horizon = T_f;
    d.inputs.resize(n, 3 * M);
    d.targets.resize(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t t = i + M - 1;  // last lag index
        for (std::size_t lag = 0; lag < M; ++lag)
            d.inputs.block(i, 3 * lag, 1, 3) = obs[t - M + 1 + lag].transpose();
        d.targets.row(i) = obs[t + T_f].transpose();
    }
    return d;
}

/// alpha solving (K + n*lambda*I) alpha = y, the minimizer of
/// lambda*||f||_H^2 + (1/n) sum (y_i - f(x_i))^2.
inline Eigen::MatrixXd solve_ls_svm(const Eigen::MatrixXd& K, const Eigen::MatrixXd& Y,
                                    double lambda) {
    const double n = static_cast<double>(K.rows());
    Eigen::MatrixXd A = K + n * lambda * Eigen::MatrixXd::Identity(K.rows(), K.cols());
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("solve_ls_svm: factorization failed");
    return llt.solve(Y);
}

/// Regularized empirical objective lambda*a'Ka + (1/n)||Ka - y||^2.
inline double svm_objective(const Eigen::MatrixXd& K, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& alpha, double lambda) {
    const double n = static_cast<double>(K.rows());
    Eigen::VectorXd f = K * alpha;
    return lambda * alpha.dot(f) + (f - y).squaredNorm() / n;
}

struct Hyperparams {
    double lambda = 1.0;
    double sigma = 1.0;
    std::size_t embed_len = 1;
};

struct TrainedLsSvm {
    Eigen::MatrixXd inputs;  // scaled training inputs, n x 3M
    Eigen::MatrixXd alpha;   // n x 3, one column per output coordinate
    ScalingTransform scaling;
    Hyperparams params;
    std::size_t horizon = 1;
};

inline Vec3 predict(const TrainedLsSvm& model, std::span<const Vec3> recent) {
    const std::size_t M = model.params.embed_len;
    if (recent.size() < M) throw std::invalid_argument("prediction window shorter than M");
    Eigen::VectorXd q(3 * M);
    for (std::size_t lag = 0; lag < M; ++lag)
        q.segment(3 * lag, 3) = recent[recent.size() - M + lag];
    q = model.scaling.apply(q);
    const double s2 = model.params.sigma * model.params.sigma;
    Eigen::VectorXd k =
        (-s2 * (model.inputs.rowwise() - q.transpose()).rowwise().squaredNorm()).array().exp();
    return model.alpha.transpose() * k;
}

struct CvGrid {
    std::array<double, 10> lambda_grid;
    std::array<double, 10> sigma_grid;
};

inline std::array<double, 10> geometric_grid(double lo, double hi) {
    std::array<double, 10> g;
    const double ratio = std::pow(hi / lo, 1.0 / 9.0);
    g[0] = lo;
    for (int i = 1; i < 9; ++i) g[i] = lo * std::pow(ratio, i);
    g[9] = hi;
    return g;
}

/// 10-point geometric grids with the endpoints
///   lambda in [10 (3n/4)^-2, 1.0],  sigma in [0.1, 2 (3n/4)^{1/(3M)}].
inline CvGrid cv_grid(std::size_t n_train, std::size_t M) {
    if (n_train < 8) throw std::invalid_argument("cv_grid: need at least 8 samples");
    const double m = 0.75 * static_cast<double>(n_train);
    CvGrid grid;
    grid.lambda_grid = geometric_grid(10.0 / (m * m), 1.0);
    grid.sigma_grid = geometric_grid(0.1, 2.0 * std::pow(m, 1.0 / (3.0 * static_cast<double>(M))));
    return grid;
}

struct CvResult {
    double lambda = 0.0;
    double sigma = 0.0;
    double error = std::numeric_limits<double>::infinity();
};

/// 4-fold CV over the 100 grid pairs; folds are contiguous blocks in
/// temporal order. Ties break toward smaller lambda, then smaller sigma.
inline CvResult cross_validate(const EmbeddedDataset& dataset, const CvGrid& grid) {
    const Eigen::Index n = dataset.inputs.rows();
    if (n < 8) throw std::invalid_argument("cross_validate: need at least 8 samples");
    ScalingTransform scaling = fit_scaling(dataset.inputs);
    Eigen::MatrixXd X = scaling.apply(dataset.inputs);

    constexpr int kFolds = 4;
    Eigen::Matrix<double, 10, 10> errors;  // [lambda][sigma]
    errors.setZero();

    for (int fold = 0; fold < kFolds; ++fold) {
        const Eigen::Index v_begin = n * fold / kFolds;
        const Eigen::Index v_end = n * (fold + 1) / kFolds;
        const Eigen::Index n_val = v_end - v_begin;
        const Eigen::Index n_tr = n - n_val;

        Eigen::MatrixXd Xt(n_tr, X.cols()), Xv(n_val, X.cols());
        Eigen::MatrixXd Yt(n_tr, 3), Yv(n_val, 3);
        Xt.topRows(v_begin) = X.topRows(v_begin);
        Xt.bottomRows(n - v_end) = X.bottomRows(n - v_end);
        Yt.topRows(v_begin) = dataset.targets.topRows(v_begin);
        Yt.bottomRows(n - v_end) = dataset.targets.bottomRows(n - v_end);
        Xv = X.middleRows(v_begin, n_val);
        Yv = dataset.targets.middleRows(v_begin, n_val);

        const Eigen::MatrixXd d_tt = squared_distances(Xt, Xt);
        const Eigen::MatrixXd d_vt = squared_distances(Xv, Xt);
        for (int is = 0; is < 10; ++is) {
            const double s2 = grid.sigma_grid[is] * grid.sigma_grid[is];
            Eigen::MatrixXd K = (-s2 * d_tt).array().exp();
            Eigen::MatrixXd Kv = (-s2 * d_vt).array().exp();
            for (int il = 0; il < 10; ++il) {
                Eigen::MatrixXd alpha = solve_ls_svm(K, Yt, grid.lambda_grid[il]);
                errors(il, is) +=
                    (Kv * alpha - Yv).rowwise().squaredNorm().mean() / kFolds;
            }
        }
    }

    CvResult best;
    for (int il = 0; il < 10; ++il)
        for (int is = 0; is < 10; ++is)
            if (errors(il, is) < best.error) {
                best.error = errors(il, is);
                best.lambda = grid.lambda_grid[il];
                best.sigma = grid.sigma_grid[is];
            }
    return best;
}

struct EmbeddingChoice {
    std::size_t embed_len = 1;
    CvResult cv;
};

/// Embedding search core: CV errors are supplied lazily per M; for M > 5
/// the search stops once the current best error exceeds 1.02x the best
/// over all smaller M. Returns the overall best among evaluated M.
template <typename EvalFn>
EmbeddingChoice select_embedding_impl(EvalFn&& evaluate, std::size_t max_M) {
    if (max_M < 1) throw std::invalid_argument("max_M must be >= 1");
    EmbeddingChoice best;
    double best_prev = std::numeric_limits<double>::infinity();
    for (std::size_t M = 1; M <= max_M; ++M) {
        std::optional<CvResult> cv = evaluate(M);
        if (!cv) break;  // series too short for this M
        if (cv->error < best.cv.error) {
            best.cv = *cv;
            best.embed_len = M;
        }
        if (M > 5 && cv->error > 1.02 * best_prev) break;
        best_prev = std::min(best_prev, cv->error);
    }
    return best;
}

inline EmbeddingChoice select_embedding(std::span<const Vec3> obs, std::size_t T_f,
                                        std::size_t max_M) {
    return select_embedding_impl(
        [&](std::size_t M) -> std::optional<CvResult> {
            if (obs.size() < M + T_f + 8) return std::nullopt;
            EmbeddedDataset d = delay_embed(obs, M, T_f);
            if (d.inputs.rows() < 8) return std::nullopt;
            return cross_validate(d, cv_grid(d.inputs.rows(), M));
        },
        max_M);
}

/// Retrain on the full embedded set with lambda = (4/3) lambda*.
inline TrainedLsSvm train_final(std::span<const Vec3> obs, std::size_t M, double lambda_star,
                                double sigma_star, std::size_t T_f) {
    EmbeddedDataset d = delay_embed(obs, M, T_f);
    TrainedLsSvm model;
    model.scaling = fit_scaling(d.inputs);
    model.inputs = model.scaling.apply(d.inputs);
    model.params = Hyperparams{4.0 / 3.0 * lambda_star, sigma_star, M};
    model.horizon = T_f;
    Eigen::MatrixXd K = kernel_matrix(model.inputs, sigma_star);
    model.alpha = solve_ls_svm(K, d.targets, model.params.lambda);
    return model;
}

inline nlohmann::json to_json(const TrainedLsSvm& model) {
    auto mat = [](const Eigen::MatrixXd& m) {
        std::vector<std::vector<double>> rows(m.rows());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            rows[i].assign(m.row(i).begin(), m.row(i).end());
        return rows;
    };
    return {{"embed_len", model.params.embed_len},
            {"lambda", model.params.lambda},
            {"sigma", model.params.sigma},
            {"horizon", model.horizon},
            {"scaling_offset", std::vector<double>(model.scaling.offset.begin(),
                                                   model.scaling.offset.end())},
            {"scaling_gain",
             std::vector<double>(model.scaling.gain.begin(), model.scaling.gain.end())},
            {"inputs", mat(model.inputs)},
            {"alpha", mat(model.alpha)}};
}

inline TrainedLsSvm svm_from_json(const nlohmann::json& j) {
    auto mat = [](const nlohmann::json& rows) {
        Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = rows[i][c].get<double>();
        return m;
    };
    TrainedLsSvm model;
    model.params.embed_len = j.at("embed_len").get<std::size_t>();
    model.params.lambda = j.at("lambda").get<double>();
    model.params.sigma = j.at("sigma").get<double>();
    model.horizon = j.at("horizon").get<std::size_t>();
    auto off = j.at("scaling_offset").get<std::vector<double>>();
    auto gain = j.at("scaling_gain").get<std::vector<double>>();
    model.scaling.offset = Eigen::Map<Eigen::VectorXd>(off.data(), off.size());
    model.scaling.gain = Eigen::Map<Eigen::VectorXd>(gain.data(), gain.size());
    model.inputs = mat(j.at("inputs"));
    model.alpha = mat(j.at("alpha"));
    return model;
}

}  // namespace lorenzlab

#endif
