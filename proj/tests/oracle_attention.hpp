#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "pcseg/local_attention.hpp"

// Explicit loop-over-(i,j,h) multi-head attention reference. Raw double
// loops over the parameter buffers; shares nothing with the Tensor op path.
// x is row-major [ch x n_keys]; the first n_q columns are the queries.
// head_bias, when nonempty, holds one row-major [n_q x n_keys] matrix per head.
inline std::vector<double> mhsa_loop_oracle(const std::vector<double>& x, std::size_t ch,
                                            std::size_t n_keys, std::size_t n_q,
                                            const pcseg::AttentionParams& p, std::size_t heads,
                                            std::size_t head_dim, bool scale_logits,
                                            const std::vector<std::vector<double>>& head_bias = {}) {
    auto lin = [&](const pcseg::LinearLayer& layer, std::size_t cols) {
        std::vector<double> y(ch * cols, 0.0);
        for (std::size_t o = 0; o < ch; ++o) {
            for (std::size_t i = 0; i < cols; ++i) {
                double acc = layer.bias.values()[o];
                for (std::size_t c = 0; c < ch; ++c) {
                    acc += layer.weight.values()[o * ch + c] * x[c * n_keys + i];
                }
                y[o * cols + i] = acc;
            }
        }
        return y;
    };
    const std::vector<double> q = lin(p.query, n_q);
    const std::vector<double> k = lin(p.key, n_keys);
    const std::vector<double> v = lin(p.value, n_keys);

    const double scale = scale_logits ? 1.0 / std::sqrt(static_cast<double>(head_dim)) : 1.0;
    std::vector<double> aggregated(ch * n_q, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n_q; ++i) {
            std::vector<double> logits(n_keys);
            double mx = -1e300;
            for (std::size_t j = 0; j < n_keys; ++j) {
                double dot = 0.0;
                for (std::size_t d = 0; d < head_dim; ++d) {
                    dot += q[(h * head_dim + d) * n_q + i] * k[(h * head_dim + d) * n_keys + j];
                }
                dot *= scale;
                if (!head_bias.empty()) dot += head_bias[h][i * n_keys + j];
                logits[j] = dot;
                mx = std::max(mx, dot);
            }
            double denom = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                denom += l;
            }
            for (std::size_t j = 0; j < n_keys; ++j) {
                const double attn = logits[j] / denom;
                for (std::size_t d = 0; d < head_dim; ++d) {
                    aggregated[(h * head_dim + d) * n_q + i] +=
                        attn * v[(h * head_dim + d) * n_keys + j];
                }
            }
        }
    }
    std::vector<double> out(ch * n_q, 0.0);
    for (std::size_t o = 0; o < ch; ++o) {
        for (std::size_t i = 0; i < n_q; ++i) {
            double acc = p.out.bias.values()[o];
            for (std::size_t c = 0; c < ch; ++c) {
                acc += p.out.weight.values()[o * ch + c] * aggregated[c * n_q + i];
            }
            out[o * n_q + i] = acc;
        }
    }
    return out;
}
