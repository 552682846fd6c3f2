#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "wsvad/generator.h"
#include "wsvad/random.h"

namespace wsvad::testing {

struct ParamRef {
    std::size_t layer;
    bool bias;
    Eigen::Index index;
};

inline double& param_at(MlpParams& p, const ParamRef& r) {
    auto& layer = p.layers[r.layer];
    return r.bias ? layer.bias.data()[r.index] : layer.weight.data()[r.index];
}

inline double grad_at(const ParamTensors& g, const ParamRef& r) {
    const auto& layer = g[r.layer];
    return r.bias ? layer.bias.data()[r.index] : layer.weight.data()[r.index];
}

/// Every parameter when there are at most `budget`, otherwise `budget` entries
/// spread over all tensors (each tensor gets at least one).
inline std::vector<ParamRef> sample_params(const MlpParams& p, std::size_t budget, Rng& rng) {
    std::vector<ParamRef> all;
    if (p.parameter_count() <= budget) {
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            for (Eigen::Index i = 0; i < p.layers[l].weight.size(); ++i) all.push_back({l, false, i});
            for (Eigen::Index i = 0; i < p.layers[l].bias.size(); ++i) all.push_back({l, true, i});
        }
        return all;
    }
    const std::size_t tensors = p.layers.size() * 2;
    const std::size_t per_tensor = std::max<std::size_t>(1, budget / tensors);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        for (bool bias : {false, true}) {
            const auto size = static_cast<std::uint64_t>(bias ? p.layers[l].bias.size() : p.layers[l].weight.size());
            for (std::size_t k = 0; k < std::min<std::uint64_t>(per_tensor, size); ++k) {
                all.push_back({l, bias, static_cast<Eigen::Index>(rng.below(size))});
            }
        }
    }
    return all;
}

/// Central finite difference of `loss` with respect to one parameter.
inline double central_difference(MlpParams& p, const ParamRef& r, const std::function<double(const MlpParams&)>& loss,
                                 double step = 1e-6) {
    double& w = param_at(p, r);
    const double saved = w;
    w = saved + step;
    const double up = loss(p);
    w = saved - step;
    const double down = loss(p);
    w = saved;
    return (up - down) / (2.0 * step);
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true gradient is
/// ~0 from dividing finite-difference round-off by nothing.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// The network evaluated in long double, independent of the library's forward
/// pass. Activations are cached so that scores under a single-parameter
/// perturbation cost a rank-one update instead of a full pass. A central
/// difference with step 1e-6 on a double-precision loss carries ~1e-10 of
/// round-off, which swamps gradients near 1e-6; here it is ~1e-13.
class ExtendedNet {
public:
    using Real = long double;
    using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Row = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

    ExtendedNet(const MlpParams& p, const Matrix& x) {
        for (const auto& layer : p.layers) {
            w_.push_back(layer.weight.cast<Real>());
            b_.push_back(layer.bias.cast<Real>().transpose());
        }
        h_.push_back(x.cast<Real>());
        for (std::size_t l = 0; l < w_.size(); ++l) {
            z_.push_back(affine(h_[l], l));
            if (l + 1 < w_.size()) h_.push_back(z_[l].cwiseMax(Real(0)));
        }
    }

    /// Output scores with the parameter `r` shifted by `delta`.
    std::vector<Real> scores_with(const ParamRef& r, Real delta) const {
        const std::size_t l = r.layer;
        const Eigen::Index cols = w_[l].cols();
        const Eigen::Index col = r.bias ? r.index : r.index % cols;
        // Only column `col` of z_l moves.
        Mat z = z_[l];
        if (r.bias) {
            z.col(col).array() += delta;
        } else {
            z.col(col) += delta * h_[l].col(r.index / cols);
        }
        for (std::size_t k = l + 1; k < w_.size(); ++k) {
            const Mat h = z.cwiseMax(Real(0));
            if (k == l + 1) {
                // rank-one change of the next layer's input
                z = z_[k] + (h.col(col) - h_[k].col(col)) * w_[k].row(col);
            } else {
                z = affine(h, k);
            }
        }
        std::vector<Real> s(static_cast<std::size_t>(z.rows()));
        for (Eigen::Index i = 0; i < z.rows(); ++i) s[static_cast<std::size_t>(i)] = Real(1) / (Real(1) + std::exp(-z(i, 0)));
        return s;
    }

private:
    Mat affine(const Mat& in, std::size_t l) const { return (in * w_[l]).rowwise() + b_[l]; }

    std::vector<Mat> w_, z_, h_;
    std::vector<Row> b_;
};

/// Ranking objective summed over consecutive (normal bag, abnormal bag) row
/// blocks of length n, written out directly from the definition.
inline long double reference_mil_objective(const std::vector<long double>& s, std::size_t n, double epsilon,
                                           double lambda_sparsity, double lambda_smooth) {
    long double total = 0.0L;
    for (std::size_t base = 0; base + 2 * n <= s.size(); base += 2 * n) {
        const auto* sn = s.data() + base;
        const auto* sa = sn + n;
        const long double gap = *std::max_element(sa, sa + n) - *std::max_element(sn, sn + n);
        total += std::max(0.0L, static_cast<long double>(epsilon) - gap);
        for (std::size_t i = 0; i < n; ++i) total += lambda_sparsity * sa[i];
        for (std::size_t i = 0; i + 1 < n; ++i) total += lambda_smooth * (sa[i + 1] - sa[i]) * (sa[i + 1] - sa[i]);
    }
    return total;
}

}  // namespace wsvad::testing
