#pragma once

// Learnable affine fake quantization with straight-through gradients, plus
// plain integer quantize/dequantize for the inference path.
//
// Conventions fixed here and relied on everywhere else:
//   - rounding is half-to-even (std::nearbyint under the default FP mode);
//   - the zero point is stored continuous and rounded at use;
//   - the scale is learned in log-space, with LSQ-style gradient scaling
//     1/sqrt(count * qmax).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mixq/common.hpp"
#include "mixq/graph.hpp"
#include "mixq/tensor.hpp"

namespace mixq {

inline double round_half_even(double x) { return std::nearbyint(x); }

inline std::pair<int64_t, int64_t> qrange(int bits, bool is_signed) {
    if (bits < 1) throw InvalidArgument("qrange: bits must be >= 1, got " + std::to_string(bits));
    if (bits > 32) throw InvalidArgument("qrange: bits above 32 are not supported");
    if (is_signed) {
        const int64_t half = int64_t{1} << (bits - 1);
        return {-half, half - 1};
    }
    return {0, (int64_t{1} << bits) - 1};
}

enum class Granularity { per_tensor, per_row, per_column };

inline const char* granularity_name(Granularity g) {
    switch (g) {
        case Granularity::per_tensor: return "per_tensor";
        case Granularity::per_row: return "per_row";
        case Granularity::per_column: return "per_column";
    }
    return "?";
}

// Maps a flat element index onto its scale/zero-point slice.
struct Slicing {
    Granularity gran = Granularity::per_tensor;
    int64_t rows = 1;
    int64_t cols = 1;
    std::shared_ptr<const std::vector<int64_t>> custom;  // e.g. CSR entry -> row

    int64_t slice_of(int64_t i) const {
        if (custom) return (*custom)[static_cast<size_t>(i)];
        switch (gran) {
            case Granularity::per_tensor: return 0;
            case Granularity::per_row: return i / cols;
            case Granularity::per_column: return i % cols;
        }
        return 0;
    }

    int64_t n_slices() const {
        if (custom) return rows;
        switch (gran) {
            case Granularity::per_tensor: return 1;
            case Granularity::per_row: return rows;
            case Granularity::per_column: return cols;
        }
        return 1;
    }

    static Slicing dense(Granularity g, int64_t rows, int64_t cols) {
        Slicing s;
        s.gran = g;
        s.rows = rows;
        s.cols = cols;
        return s;
    }

    // Per-row slicing over CSR values; per_tensor collapses to one slice.
    static Slicing csr(Granularity g, const CsrF& a) {
        if (g == Granularity::per_column)
            throw InvalidArgument("slicing: per_column is not defined for CSR values");
        Slicing s;
        s.gran = g;
        s.rows = a.n_rows;
        s.cols = 1;
        if (g == Granularity::per_row) {
            auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(a.nnz()));
            for (int64_t r = 0; r < a.n_rows; ++r)
                for (int64_t e = a.row_ptr[r]; e < a.row_ptr[r + 1]; ++e)
                    (*map)[static_cast<size_t>(e)] = r;
            s.custom = std::move(map);
        }
        return s;
    }
};

// Frozen affine parameters, as serialized into checkpoints and used by the
// integer path.
struct QuantParams {
    std::vector<double> scale;  // strictly positive
    std::vector<double> zero;   // continuous; integer after rounding
    int bits = 8;
    bool is_signed = true;

    int64_t qmin() const { return qrange(bits, is_signed).first; }
    int64_t qmax() const { return qrange(bits, is_signed).second; }

    int64_t zero_int(int64_t slice) const {
        const auto [a, b] = qrange(bits, is_signed);
        const double z = round_half_even(zero[static_cast<size_t>(slice)]);
        return static_cast<int64_t>(std::clamp(z, static_cast<double>(a), static_cast<double>(b)));
    }

    void validate() const {
        if (scale.size() != zero.size()) throw InvalidArgument("quant params: scale/zero length mismatch");
        for (double s : scale)
            if (!(s > 0.0)) throw InvalidArgument("quant params: scale entries must be positive");
        (void)qrange(bits, is_signed);
    }
};

inline std::vector<int64_t> quantize(const std::vector<double>& x, const QuantParams& p, const Slicing& slicing) {
    p.validate();
    const auto [a, b] = qrange(p.bits, p.is_signed);
    std::vector<int64_t> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i])) throw DomainError("quantize: non-finite input at index " + std::to_string(i));
        const int64_t s = slicing.slice_of(static_cast<int64_t>(i));
        const double q = round_half_even(x[i] / p.scale[static_cast<size_t>(s)]) + static_cast<double>(p.zero_int(s));
        out[i] = static_cast<int64_t>(std::clamp(q, static_cast<double>(a), static_cast<double>(b)));
    }
    return out;
}

inline std::vector<double> dequantize(const std::vector<int64_t>& xq, const QuantParams& p, const Slicing& slicing) {
    std::vector<double> out(xq.size());
    for (size_t i = 0; i < xq.size(); ++i) {
        const int64_t s = slicing.slice_of(static_cast<int64_t>(i));
        out[i] = static_cast<double>(xq[i] - p.zero_int(s)) * p.scale[static_cast<size_t>(s)];
    }
    return out;
}

// Trainable quantizer state. Scale and zero point live in leaf tensors so the
// tape reaches them; `log_s` keeps the scale positive by construction.
struct Quantizer {
    int bits = 8;
    bool is_signed = true;
    Granularity gran = Granularity::per_tensor;
    bool symmetric = false;
    bool learnable = true;
    bool calibrated = false;

    Tensor log_s;  // [n_slices]
    Tensor zero;   // [n_slices]

    Quantizer() = default;
    Quantizer(int bits_, bool is_signed_, Granularity g, bool symmetric_ = false, bool learnable_ = true)
        : bits(bits_), is_signed(is_signed_), gran(g), symmetric(symmetric_), learnable(learnable_) {
        (void)qrange(bits, is_signed);
    }

    int64_t qmin() const { return qrange(bits, is_signed).first; }
    int64_t qmax() const { return qrange(bits, is_signed).second; }

    void init_slices(int64_t n) {
        if (log_s.defined() && log_s.numel() == n) return;
        log_s = Tensor::zeros({n}, learnable);
        zero = Tensor::zeros({n}, learnable);
    }

    QuantParams params() const {
        if (!calibrated) throw StateError("quantizer: parameters requested before calibration");
        QuantParams p;
        p.bits = bits;
        p.is_signed = is_signed;
        p.scale.resize(log_s.values().size());
        for (size_t i = 0; i < p.scale.size(); ++i) p.scale[i] = std::exp(log_s.values()[i]);
        p.zero = zero.values();
        return p;
    }
};

// Min-max calibration. Asymmetric: S = (max-min)/(qmax-qmin), Z = qmin - min/S.
// Symmetric: Z = 0, S = max|x|/qmax. Scales are floored at 1e-8.
inline void calibrate_minmax(Quantizer& q, const std::vector<double>& x, const Slicing& slicing) {
    if (x.empty()) throw InvalidArgument("calibrate: empty input");
    const int64_t n_slices = slicing.n_slices();
    q.init_slices(n_slices);

    constexpr double kScaleFloor = 1e-8;
    const auto [a, b] = qrange(q.bits, q.is_signed);
    std::vector<double> mn(static_cast<size_t>(n_slices), std::numeric_limits<double>::infinity());
    std::vector<double> mx(static_cast<size_t>(n_slices), -std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i])) throw DomainError("calibrate: non-finite input");
        const size_t s = static_cast<size_t>(slicing.slice_of(static_cast<int64_t>(i)));
        mn[s] = std::min(mn[s], x[i]);
        mx[s] = std::max(mx[s], x[i]);
    }

    auto& ls = q.log_s.values_mut();
    auto& zv = q.zero.values_mut();
    for (int64_t s = 0; s < n_slices; ++s) {
        const size_t si = static_cast<size_t>(s);
        if (!std::isfinite(mn[si])) {  // slice saw no data; keep the identity default
            ls[si] = 0.0;
            zv[si] = 0.0;
            continue;
        }
        double scale;
        double zp;
        if (q.symmetric) {
            scale = std::max(std::max(std::abs(mn[si]), std::abs(mx[si])) / static_cast<double>(std::max<int64_t>(b, 1)),
                             kScaleFloor);
            zp = 0.0;
        } else {
            scale = std::max((mx[si] - mn[si]) / static_cast<double>(b - a), kScaleFloor);
            zp = std::clamp(round_half_even(static_cast<double>(a) - mn[si] / scale), static_cast<double>(a),
                            static_cast<double>(b));
        }
        ls[si] = std::log(scale);
        zv[si] = zp;
    }
    q.calibrated = true;
}

// Fake quantization: forward dequantize(quantize(x)); backward STE. The input
// gradient passes exactly where the rounded value was not clipped; scale and
// zero-point gradients follow the straight-through-through-round convention.
inline Tensor fake_quantize(const Quantizer& q, const Tensor& x, const Slicing& slicing) {
    if (!q.calibrated) throw StateError("fake_quantize: quantizer is not calibrated");
    const auto [qa, qb] = qrange(q.bits, q.is_signed);
    const double lo = static_cast<double>(qa), hi = static_cast<double>(qb);

    const auto& xv = x.values();
    const auto& lsv = q.log_s.values();
    const auto& zv = q.zero.values();
    const size_t n = xv.size();

    auto scales = std::make_shared<std::vector<double>>(lsv.size());
    auto zints = std::make_shared<std::vector<double>>(zv.size());
    for (size_t s = 0; s < lsv.size(); ++s) {
        (*scales)[s] = std::exp(lsv[s]);
        (*zints)[s] = std::clamp(round_half_even(zv[s]), lo, hi);
    }

    std::vector<double> out(n);
    auto slice_counts = std::make_shared<std::vector<double>>(lsv.size(), 0.0);
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(xv[i])) throw DomainError("fake_quantize: non-finite input");
        const size_t s = static_cast<size_t>(slicing.slice_of(static_cast<int64_t>(i)));
        (*slice_counts)[s] += 1.0;
        const double u = xv[i] / (*scales)[s];
        const double uq = round_half_even(u) + (*zints)[s];
        const double qv = std::clamp(uq, lo, hi);
        out[i] = (qv - (*zints)[s]) * (*scales)[s];
    }

    auto xp = x.node_ptr();
    auto sp = q.log_s.node_ptr();
    auto zp = q.zero.node_ptr();
    auto slicing_copy = std::make_shared<Slicing>(slicing);
    const int64_t qmax_eff = std::max<int64_t>(qb, 1);

    return detail::make_op(
        x.shape(), std::move(out), {x, q.log_s, q.zero},
        [xp, sp, zp, scales, zints, slicing_copy, slice_counts, lo, hi, qmax_eff](TensorNode& self) {
            const auto& g = self.grad;
            const auto& xv2 = xp->values;
            const size_t n_slices = scales->size();
            std::vector<double> gs(n_slices, 0.0);
            std::vector<double> gz(n_slices, 0.0);
            const bool need_x = xp->requires_grad;
            std::vector<double>* gx = need_x ? &xp->ensure_grad() : nullptr;

            for (size_t i = 0; i < g.size(); ++i) {
                const size_t s = static_cast<size_t>(slicing_copy->slice_of(static_cast<int64_t>(i)));
                const double scale = (*scales)[s];
                const double zi = (*zints)[s];
                const double u = xv2[i] / scale;
                const double ru = round_half_even(u);
                const double uq = ru + zi;
                const bool inside = uq >= lo && uq <= hi;
                if (inside) {
                    if (need_x) (*gx)[i] += g[i];
                    gs[s] += g[i] * (ru - u);
                } else {
                    const double qv = std::clamp(uq, lo, hi);
                    gs[s] += g[i] * (qv - zi);
                    gz[s] += g[i] * (-scale);
                }
            }
            if (sp->requires_grad) {
                auto& gls = sp->ensure_grad();
                for (size_t s = 0; s < n_slices; ++s) {
                    const double cnt = std::max((*slice_counts)[s], 1.0);
                    const double lsq = 1.0 / std::sqrt(cnt * static_cast<double>(qmax_eff));
                    // d/d(log S) = dL/dS * S, then LSQ step-size gradient scaling.
                    gls[s] += gs[s] * (*scales)[s] * lsq;
                }
            }
            if (zp->requires_grad) {
                auto& gzv = zp->ensure_grad();
                for (size_t s = 0; s < n_slices; ++s) gzv[s] += gz[s];
            }
        });
}

inline Tensor fake_quantize(const Quantizer& q, const Tensor& x) {
    Slicing s = x.shape().size() == 2 ? Slicing::dense(q.gran, x.dim(0), x.dim(1))
                                      : Slicing::dense(Granularity::per_tensor, x.numel(), 1);
    return fake_quantize(q, x, s);
}

}  // namespace mixq
