#pragma once
// Latent-path analysis: trace the aging trajectory of an image through the
// latent space, project trajectories onto a PCA plane, fit the linear
// age direction baseline, traverse it, and quantify how far a learned path
// deviates from a straight line.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "sam/encoder.hpp"
#include "sam/oracles.hpp"
#include "sam/training.hpp"

namespace sam {

struct PathEntry {
    double target_age = 0.0;
    LatentCode code;           // final latent (residual + w* in residual mode)
    double predicted_age = 0.0;
};

struct PathTrace {
    std::vector<PathEntry> entries;
    std::size_t size() const { return entries.size(); }
};

/// Latent codes and predictor ages along an ascending target-age sweep.
inline PathTrace trace_age_path(const SamModel& m, const AgePredictor& predictor,
                                const Tensor& image, const std::vector<double>& targets) {
    if (targets.empty()) throw std::invalid_argument("trace_age_path: no targets");
    for (std::size_t i = 1; i < targets.size(); ++i)
        if (!(targets[i] > targets[i - 1]))
            throw std::invalid_argument("trace_age_path: targets must be strictly increasing");
    PathTrace trace;
    trace.entries.reserve(targets.size());
    for (double age : targets) {
        Tape t;
        SamApply a = sam_apply_t(t, m, t.constant(image), age);
        PathEntry e;
        e.target_age = age;
        e.code = t.val(a.code);
        e.predicted_age = t.val(predict_age_t(t, predictor, a.image)).item();
        trace.entries.push_back(std::move(e));
    }
    return trace;
}

inline std::vector<double> age_grid(double lo, double hi, double step) {
    if (step <= 0.0) throw std::invalid_argument("age_grid: step must be positive");
    std::vector<double> out;
    for (double a = lo; a <= hi + 1e-9; a += step) out.push_back(std::min(a, hi));
    return out;
}

// ---------------------------------------------------------------------------
// PCA projection
// ---------------------------------------------------------------------------

struct PcaPlane {
    std::vector<double> mean;  // flattened code mean of the fitting trace
    std::vector<double> axis0, axis1;
    double variance0 = 0.0, variance1 = 0.0;
};

struct ProjectedPoint {
    double x = 0.0, y = 0.0;
};

namespace detail {

inline std::vector<double> flatten_code(const LatentCode& c) {
    return c.v;
}

}  // namespace detail

/// Principal plane of the fitting trace's codes: mean-centered, top-2
/// components ordered by variance, each component's sign fixed by making its
/// largest-magnitude coordinate positive.
inline PcaPlane fit_pca_plane(const PathTrace& fit) {
    const std::size_t n = fit.size();
    if (n < 2) throw std::invalid_argument("fit_pca_plane: need at least 2 entries");
    const std::size_t dim = fit.entries[0].code.size();

    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& code = fit.entries[i].code;
        if (code.size() != dim) throw std::invalid_argument("fit_pca_plane: ragged codes");
        for (std::size_t j = 0; j < dim; ++j)
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = code.v[j];
    }
    Eigen::RowVectorXd mu = X.colwise().mean();
    X.rowwise() -= mu;

    // Dual (Gram) eigenproblem: much smaller than dim x dim for short traces.
    Eigen::MatrixXd G = X * X.transpose() / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    if (es.info() != Eigen::Success) throw std::runtime_error("fit_pca_plane: eigensolver failed");
    const auto& evals = es.eigenvalues();   // ascending
    const auto& evecs = es.eigenvectors();

    const double lead = evals(static_cast<Eigen::Index>(n - 1));
    if (lead <= 1e-18) throw std::invalid_argument("fit_pca_plane: rank-deficient (codes identical)");

    PcaPlane plane;
    plane.mean.assign(mu.data(), mu.data() + dim);
    auto extract = [&](std::size_t order) {
        const auto k = static_cast<Eigen::Index>(n - 1 - order);
        const double lambda = std::max(0.0, evals(k));
        Eigen::VectorXd axis = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
        if (lambda > 1e-18) {
            axis = X.transpose() * evecs.col(k);
            axis /= std::sqrt(static_cast<double>(n) * lambda);
        }
        // sign convention: largest-magnitude coordinate positive
        Eigen::Index imax = 0;
        double best = 0.0;
        for (Eigen::Index j = 0; j < axis.size(); ++j)
            if (std::abs(axis(j)) > best) {
                best = std::abs(axis(j));
                imax = j;
            }
        if (axis(imax) < 0.0) axis = -axis;
        return std::pair<Eigen::VectorXd, double>(axis, lambda);
    };
    auto [a0, l0] = extract(0);
    auto [a1, l1] = extract(1);
    plane.axis0.assign(a0.data(), a0.data() + dim);
    plane.axis1.assign(a1.data(), a1.data() + dim);
    plane.variance0 = l0;
    plane.variance1 = l1;
    return plane;
}

inline ProjectedPoint project_code(const PcaPlane& plane, const LatentCode& code) {
    if (code.size() != plane.mean.size())
        throw std::invalid_argument("project_code: dimension mismatch");
    ProjectedPoint p;
    for (std::size_t j = 0; j < plane.mean.size(); ++j) {
        const double c = code.v[j] - plane.mean[j];
        p.x += c * plane.axis0[j];
        p.y += c * plane.axis1[j];
    }
    return p;
}

/// Fits the plane on traces[fit_on] and projects every trace onto it.
inline std::vector<std::vector<ProjectedPoint>> pca_project(const std::vector<PathTrace>& traces,
                                                            std::size_t fit_on) {
    if (fit_on >= traces.size()) throw std::invalid_argument("pca_project: fit index out of range");
    PcaPlane plane = fit_pca_plane(traces[fit_on]);
    std::vector<std::vector<ProjectedPoint>> out;
    out.reserve(traces.size());
    for (const PathTrace& tr : traces) {
        std::vector<ProjectedPoint> pts;
        pts.reserve(tr.size());
        for (const PathEntry& e : tr.entries) pts.push_back(project_code(plane, e.code));
        out.push_back(std::move(pts));
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear age direction (the latent-space baseline)
// ---------------------------------------------------------------------------

struct LinearDirection {
    Tensor direction;  // unit vector in flattened code space
    double bias = 0.0;
};

/// Logistic regression on mean-centered flattened codes, labels binarized
/// at `threshold` years; full-batch gradient descent, direction normalized.
inline LinearDirection fit_linear_direction(const std::vector<LatentCode>& codes,
                                            const std::vector<double>& ages,
                                            double threshold = 50.0, std::size_t iterations = 600,
                                            double lr = 1.0) {
    if (codes.size() != ages.size() || codes.size() < 2)
        throw std::invalid_argument("fit_linear_direction: need matching codes/ages");
    const std::size_t n = codes.size(), dim = codes[0].size();
    std::size_t positives = 0;
    for (double a : ages)
        if (a >= threshold) ++positives;
    if (positives == 0 || positives == n)
        throw std::invalid_argument("fit_linear_direction: degenerate single-class labels");

    std::vector<double> mean(dim, 0.0);
    for (const LatentCode& c : codes) {
        if (c.size() != dim) throw std::invalid_argument("fit_linear_direction: ragged codes");
        for (std::size_t j = 0; j < dim; ++j) mean[j] += c.v[j];
    }
    for (double& m : mean) m /= static_cast<double>(n);

    // global standardization: uniform code rescalings reproduce the exact
    // same iterates, so the fitted direction is scale-invariant
    double var = 0.0;
    for (const LatentCode& c : codes)
        for (std::size_t j = 0; j < dim; ++j) {
            const double d = c.v[j] - mean[j];
            var += d * d;
        }
    const double scale = std::sqrt(var / (static_cast<double>(n) * static_cast<double>(dim)));
    if (scale == 0.0) throw std::invalid_argument("fit_linear_direction: codes are identical");

    std::vector<double> z(n * dim);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j)
            z[i * dim + j] = (codes[i].v[j] - mean[j]) / scale;

    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    std::vector<double> grad(dim);
    for (std::size_t it = 0; it < iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* zi = z.data() + i * dim;
            double logit = b;
            for (std::size_t j = 0; j < dim; ++j) logit += w[j] * zi[j];
            const double p = 1.0 / (1.0 + std::exp(-logit));
            const double err = p - (ages[i] >= threshold ? 1.0 : 0.0);
            for (std::size_t j = 0; j < dim; ++j) grad[j] += err * zi[j];
            gb += err;
        }
        const double s = lr / static_cast<double>(n);
        for (std::size_t j = 0; j < dim; ++j) w[j] -= s * grad[j];
        b -= s * gb;
    }

    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::runtime_error("fit_linear_direction: zero direction");
    LinearDirection d;
    d.direction = Tensor({dim});
    for (std::size_t j = 0; j < dim; ++j) d.direction.v[j] = w[j] / norm;
    // decision function in original units: w.(x-mu)/scale + b, rescaled so
    // the direction is unit: d.x + bias
    double dmu = 0.0;
    for (std::size_t j = 0; j < dim; ++j) dmu += d.direction.v[j] * mean[j];
    d.bias = scale * b / norm - dmu;
    return d;
}

/// Images for code + i*stride*direction, i in [-steps, steps].
inline std::vector<Tensor> traverse(const GeneratorHandle& gen, const LatentCode& code,
                                    const LinearDirection& dir, std::size_t steps, double stride) {
    const std::size_t L = gen.spec.latent_rows, D = gen.spec.style_dim;
    if (code.shape != std::vector<std::size_t>{L, D})
        throw std::invalid_argument("traverse: code shape mismatch");
    if (dir.direction.size() != L * D)
        throw std::invalid_argument("traverse: direction dimension mismatch");
    std::vector<Tensor> out;
    out.reserve(2 * steps + 1);
    for (long i = -static_cast<long>(steps); i <= static_cast<long>(steps); ++i) {
        LatentCode c = code;
        const double a = static_cast<double>(i) * stride;
        for (std::size_t j = 0; j < c.size(); ++j) c.v[j] += a * dir.direction.v[j];
        out.push_back(synthesize(gen, c));
    }
    return out;
}

/// Max over interior codes of (distance to the endpoint line) / (chord
/// length). Zero iff the trace is collinear.
inline double path_nonlinearity(const PathTrace& trace) {
    if (trace.size() < 3) throw std::invalid_argument("path_nonlinearity: need >= 3 entries");
    const std::size_t dim = trace.entries.front().code.size();
    const auto& a = trace.entries.front().code;
    const auto& b = trace.entries.back().code;
    double chord2 = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
        const double d = b.v[j] - a.v[j];
        chord2 += d * d;
    }
    if (chord2 == 0.0) throw std::invalid_argument("path_nonlinearity: zero-length chord");
    double worst = 0.0;
    for (std::size_t i = 1; i + 1 < trace.size(); ++i) {
        const auto& p = trace.entries[i].code;
        double dot_pa_ab = 0.0;
        for (std::size_t j = 0; j < dim; ++j)
            dot_pa_ab += (p.v[j] - a.v[j]) * (b.v[j] - a.v[j]);
        // residual-vector form; the textbook projection formula cancels
        // catastrophically for near-collinear points
        const double tpos = dot_pa_ab / chord2;
        double dist2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double r = (p.v[j] - a.v[j]) - tpos * (b.v[j] - a.v[j]);
            dist2 += r * r;
        }
        worst = std::max(worst, dist2 / chord2);
    }
    return std::sqrt(worst);
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

inline void write_trace_csv(const std::string& path, const PathTrace& trace) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_trace_csv: cannot write " + path);
    f << "target_age,predicted_age";
    const std::size_t dim = trace.entries.empty() ? 0 : trace.entries[0].code.size();
    for (std::size_t j = 0; j < dim; ++j) f << ",c" << j;
    f << "\n";
    for (const PathEntry& e : trace.entries) {
        f << csv_double(e.target_age) << ',' << csv_double(e.predicted_age);
        for (std::size_t j = 0; j < dim; ++j) f << ',' << csv_double(e.code.v[j]);
        f << "\n";
    }
}

inline void write_projection_csv(const std::string& path,
                                 const std::vector<PathTrace>& traces,
                                 const std::vector<std::vector<ProjectedPoint>>& projections) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_projection_csv: cannot write " + path);
    f << "trace,target_age,px,py\n";
    for (std::size_t tr = 0; tr < projections.size(); ++tr)
        for (std::size_t i = 0; i < projections[tr].size(); ++i)
            f << tr << ',' << csv_double(traces[tr].entries[i].target_age) << ','
              << csv_double(projections[tr][i].x) << ',' << csv_double(projections[tr][i].y)
              << "\n";
}

inline void save_direction(const std::string& path, const LinearDirection& d) {
    Checkpoint ck;
    ck.meta["kind"] = "linear_direction";
    ck.meta["bias"] = csv_double(d.bias);
    ck.arrays["direction"] = d.direction;
    save_checkpoint(path, ck);
}

inline LinearDirection load_direction(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.meta_at("kind") != "linear_direction")
        throw std::runtime_error("load_direction: not a direction file");
    LinearDirection d;
    d.direction = ck.array("direction");
    d.bias = std::stod(ck.meta_at("bias"));
    return d;
}

}  // namespace sam
