#pragma once

// Continuous relaxation over bit-width choices. Each relaxed quantizer mixes
// the fake-quantized outputs of one child quantizer per candidate bit-width,
// weighted by softmax(alpha); the memory penalty steers alpha towards cheaper
// children, and the final assignment picks argmax(alpha) per quantizer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixq/common.hpp"
#include "mixq/quantize.hpp"
#include "mixq/tensor.hpp"

namespace mixq {

enum class Role { input, weight, aggregation, output };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::input: return "input";
        case Role::weight: return "weight";
        case Role::aggregation: return "aggregation";
        case Role::output: return "output";
    }
    return "?";
}

inline Role role_from_name(const std::string& s) {
    if (s == "input") return Role::input;
    if (s == "weight") return Role::weight;
    if (s == "aggregation") return Role::aggregation;
    if (s == "output") return Role::output;
    throw ConfigError("unknown role: " + s);
}

struct RelaxedQuantizer {
    std::string id;
    Role role = Role::output;
    std::vector<int> bit_choices;  // sorted ascending, distinct
    Tensor alphas;                 // [k], learnable
    std::vector<std::shared_ptr<Quantizer>> children;  // one per bit choice

    static RelaxedQuantizer make(std::string id, Role role, const std::vector<int>& bits, bool is_signed,
                                 Granularity gran, bool symmetric) {
        RelaxedQuantizer rq;
        rq.id = std::move(id);
        rq.role = role;
        rq.bit_choices = bits;
        std::sort(rq.bit_choices.begin(), rq.bit_choices.end());
        rq.bit_choices.erase(std::unique(rq.bit_choices.begin(), rq.bit_choices.end()), rq.bit_choices.end());
        if (rq.bit_choices.empty()) throw InvalidArgument("relaxed quantizer: empty bit choice set");
        rq.alphas = Tensor::zeros({static_cast<int64_t>(rq.bit_choices.size())}, true);
        for (int b : rq.bit_choices)
            rq.children.push_back(std::make_shared<Quantizer>(b, is_signed, gran, symmetric));
        return rq;
    }

    bool calibrated() const {
        for (const auto& c : children)
            if (!c->calibrated) return false;
        return true;
    }

    std::vector<double> mixture_weights() const {
        const auto& a = alphas.values();
        double mx = a[0];
        for (double v : a) mx = std::max(mx, v);
        std::vector<double> w(a.size());
        double denom = 0.0;
        for (size_t i = 0; i < a.size(); ++i) {
            w[i] = std::exp(a[i] - mx);
            denom += w[i];
        }
        for (double& v : w) v /= denom;
        return w;
    }

    // Selected bit-width: argmax alpha, ties resolved to the lowest bits
    // (children are sorted ascending, so the first maximum wins).
    int argmax_bits() const {
        const auto& a = alphas.values();
        size_t best = 0;
        for (size_t i = 1; i < a.size(); ++i)
            if (a[i] > a[best]) best = i;
        return bit_choices[best];
    }
};

// Differentiable mixture sum_i softmax(alpha)_i * fake_quantize_{b_i}(x).
// Gradients reach x, alpha, and every child's scale and zero point.
inline Tensor mix_forward(RelaxedQuantizer& rq, const Tensor& x, const Slicing& slicing) {
    if (!rq.calibrated()) throw StateError("mix_forward: child quantizer not calibrated (" + rq.id + ")");
    double shift = rq.alphas.values()[0];
    for (double v : rq.alphas.values()) shift = std::max(shift, v);
    Tensor e = mixq::exp(sub(rq.alphas, Tensor::scalar(shift)));
    Tensor denom = sum(e);
    Tensor out;
    for (size_t i = 0; i < rq.children.size(); ++i) {
        Tensor w = div(select(e, static_cast<int64_t>(i)), denom);
        Tensor term = mul(w, fake_quantize(*rq.children[i], x, slicing));
        out = out.defined() ? add(out, term) : term;
    }
    return out;
}

inline Tensor mix_forward(RelaxedQuantizer& rq, const Tensor& x) {
    Slicing s = x.shape().size() == 2
                    ? Slicing::dense(rq.children.front()->gran, x.dim(0), x.dim(1))
                    : Slicing::dense(Granularity::per_tensor, x.numel(), 1);
    return mix_forward(rq, x, s);
}

// ---------------------------------------------------------------------------
// Memory penalty

struct PenaltyEntry {
    int64_t numel = 0;
    std::shared_ptr<RelaxedQuantizer> rq;
};

// One entry per relaxed quantizer per forward pass.
struct PenaltyAccumulator {
    std::vector<PenaltyEntry> entries;

    void record(std::shared_ptr<RelaxedQuantizer> rq, int64_t numel) {
        entries.push_back({numel, std::move(rq)});
    }
};

constexpr double kPenaltyNormalization = 1024.0 * 8.0;

// C = sum over tensors of E_softmax(alpha)[bits] * |T| / (1024*8), built from
// generic tape ops so its gradient comes from autodiff (the closed form below
// is the independent route).
inline Tensor penalty_cost(const PenaltyAccumulator& acc) {
    if (acc.entries.empty()) throw StateError("penalty_cost: no recorded entries");
    Tensor total;
    for (const auto& entry : acc.entries) {
        RelaxedQuantizer& rq = *entry.rq;
        double shift = rq.alphas.values()[0];
        for (double v : rq.alphas.values()) shift = std::max(shift, v);
        Tensor e = mixq::exp(sub(rq.alphas, Tensor::scalar(shift)));
        std::vector<double> bits(rq.bit_choices.begin(), rq.bit_choices.end());
        Tensor b = Tensor::from_values({static_cast<int64_t>(bits.size())}, bits);
        Tensor expected = div(sum(mul(b, e)), sum(e));
        Tensor term = mul(expected, Tensor::scalar(static_cast<double>(entry.numel) / kPenaltyNormalization));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

// Analytic gradient of the penalty with respect to one quantizer's alphas:
// d C / d alpha_i = |T| p_i (b_i - sum_j p_j b_j) / (1024*8), summed over the
// entries that reference the quantizer.
inline std::vector<double> penalty_gradient(const PenaltyAccumulator& acc, const RelaxedQuantizer& rq) {
    if (acc.entries.empty()) throw StateError("penalty_gradient: no recorded entries");
    std::vector<double> grad(rq.bit_choices.size(), 0.0);
    const std::vector<double> p = rq.mixture_weights();
    double expected = 0.0;
    for (size_t i = 0; i < p.size(); ++i) expected += p[i] * static_cast<double>(rq.bit_choices[i]);
    for (const auto& entry : acc.entries) {
        if (entry.rq.get() != &rq) continue;
        for (size_t i = 0; i < p.size(); ++i)
            grad[i] += static_cast<double>(entry.numel) * p[i] *
                       (static_cast<double>(rq.bit_choices[i]) - expected) / kPenaltyNormalization;
    }
    return grad;
}

inline double penalty_value(const PenaltyAccumulator& acc) {
    double total = 0.0;
    for (const auto& entry : acc.entries) {
        const std::vector<double> p = entry.rq->mixture_weights();
        double expected = 0.0;
        for (size_t i = 0; i < p.size(); ++i)
            expected += p[i] * static_cast<double>(entry.rq->bit_choices[i]);
        total += expected * static_cast<double>(entry.numel) / kPenaltyNormalization;
    }
    return total;
}

// Element-weighted expected bit-width over the recorded tensors; the search
// log tracks this per epoch.
inline double expected_average_bits(const PenaltyAccumulator& acc) {
    double bits = 0.0, elems = 0.0;
    for (const auto& entry : acc.entries) {
        const std::vector<double> p = entry.rq->mixture_weights();
        double expected = 0.0;
        for (size_t i = 0; i < p.size(); ++i)
            expected += p[i] * static_cast<double>(entry.rq->bit_choices[i]);
        bits += expected * static_cast<double>(entry.numel);
        elems += static_cast<double>(entry.numel);
    }
    return elems > 0 ? bits / elems : 0.0;
}

// task_loss + lambda * penalty; lambda may be negative (a tiny negative value
// rewards wider bit-widths).
inline Tensor total_loss(const Tensor& task_loss, const PenaltyAccumulator& acc, double lambda) {
    if (lambda == 0.0 || acc.entries.empty()) return task_loss;
    return add(task_loss, mul(Tensor::scalar(lambda), penalty_cost(acc)));
}

// ---------------------------------------------------------------------------
// Bit-width assignment

struct BitWidthAssignment {
    struct Item {
        std::string component_id;
        Role role;
        int bits;
    };
    std::vector<Item> items;

    const Item* find(const std::string& id) const {
        for (const auto& item : items)
            if (item.component_id == id) return &item;
        return nullptr;
    }

    double mean_bits() const {
        if (items.empty()) return 0.0;
        double s = 0.0;
        for (const auto& item : items) s += item.bits;
        return s / static_cast<double>(items.size());
    }

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& item : items)
            arr.push_back({{"component_id", item.component_id}, {"role", role_name(item.role)}, {"bits", item.bits}});
        return arr;
    }

    static BitWidthAssignment from_json(const nlohmann::json& arr) {
        if (!arr.is_array()) throw ConfigError("assignment: expected a JSON array");
        BitWidthAssignment a;
        for (const auto& item : arr)
            a.items.push_back({item.at("component_id").get<std::string>(),
                               role_from_name(item.at("role").get<std::string>()), item.at("bits").get<int>()});
        return a;
    }
};

}  // namespace mixq
