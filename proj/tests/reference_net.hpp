#pragma once

// Naive reference implementation used as a test oracle. Deliberately shares
// no code with the library: plain nested loops, std::exp/std::log1p.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace ref {

struct Layer {
    std::vector<std::vector<double>> w;  // [out][in]
    std::vector<double> b;
    bool identity = false;
    double slope = 0.01;
};

inline std::vector<double> run(const std::vector<Layer>& net, std::vector<double> x) {
    for (const Layer& layer : net) {
        std::vector<double> y(layer.b.size());
        for (std::size_t o = 0; o < y.size(); ++o) {
            double s = layer.b[o];
            for (std::size_t i = 0; i < x.size(); ++i) s += layer.w[o][i] * x[i];
            y[o] = layer.identity || s > 0 ? s : layer.slope * s;
        }
        x = y;
    }
    return x;
}

// log(1 + e^z) - y z, written without reusing the library's softplus.
inline double bce_term(double z, double y) {
    const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    return sp - y * z;
}

// Mean over the batch of the summed cross-entropy at the selected outputs.
inline double loss(const std::vector<Layer>& net, const std::vector<std::vector<double>>& xs,
                   const std::vector<std::vector<double>>& ys, const std::vector<std::size_t>& selected) {
    double total = 0.0;
    for (std::size_t n = 0; n < xs.size(); ++n) {
        const auto z = run(net, xs[n]);
        for (std::size_t k = 0; k < selected.size(); ++k) total += bce_term(z[selected[k]], ys[n][k]);
    }
    return total / static_cast<double>(xs.size());
}

// One pass of minibatch SGD with heavy-ball momentum (v = mu v + g,
// w -= lr v) on the loss of a single output node. Every parameter trains.
struct Velocity {
    std::vector<std::vector<std::vector<double>>> w;
    std::vector<std::vector<double>> b;
};

inline void sgd_epoch(std::vector<Layer>& net, Velocity& vel, const std::vector<std::vector<double>>& xs,
                      const std::vector<double>& ys, std::size_t output, std::size_t batch, double lr,
                      double mu) {
    if (vel.w.empty()) {
        for (const Layer& l : net) {
            vel.w.emplace_back(l.w.size(), std::vector<double>(l.w.empty() ? 0 : l.w[0].size(), 0.0));
            vel.b.emplace_back(l.b.size(), 0.0);
        }
    }
    for (std::size_t first = 0; first < xs.size(); first += batch) {
        const std::size_t last = std::min(xs.size(), first + batch);
        const double n = static_cast<double>(last - first);
        auto gw = vel.w;
        auto gb = vel.b;
        for (auto& m : gw) for (auto& r : m) for (auto& v : r) v = 0.0;
        for (auto& r : gb) for (auto& v : r) v = 0.0;

        for (std::size_t s = first; s < last; ++s) {
            std::vector<std::vector<double>> acts{xs[s]}, pres;
            for (const Layer& layer : net) {
                std::vector<double> pre(layer.b.size()), post(layer.b.size());
                for (std::size_t o = 0; o < pre.size(); ++o) {
                    double z = layer.b[o];
                    for (std::size_t i = 0; i < acts.back().size(); ++i) z += layer.w[o][i] * acts.back()[i];
                    pre[o] = z;
                    post[o] = layer.identity || z > 0 ? z : layer.slope * z;
                }
                pres.push_back(pre);
                acts.push_back(post);
            }
            std::vector<double> delta(net.back().b.size(), 0.0);
            const double z = pres.back()[output];
            delta[output] = (1.0 / (1.0 + std::exp(-z)) - ys[s]) / n;
            for (std::size_t l = net.size(); l-- > 0;) {
                const auto& in = acts[l];
                for (std::size_t o = 0; o < delta.size(); ++o) {
                    gb[l][o] += delta[o];
                    for (std::size_t i = 0; i < in.size(); ++i) gw[l][o][i] += delta[o] * in[i];
                }
                if (l == 0) break;
                std::vector<double> prev(in.size(), 0.0);
                for (std::size_t i = 0; i < in.size(); ++i) {
                    double sum = 0.0;
                    for (std::size_t o = 0; o < delta.size(); ++o) sum += net[l].w[o][i] * delta[o];
                    const double p = pres[l - 1][i];
                    prev[i] = sum * (net[l - 1].identity || p > 0 ? 1.0 : net[l - 1].slope);
                }
                delta = prev;
            }
        }
        for (std::size_t l = 0; l < net.size(); ++l) {
            for (std::size_t o = 0; o < net[l].b.size(); ++o) {
                for (std::size_t i = 0; i < net[l].w[o].size(); ++i) {
                    vel.w[l][o][i] = mu * vel.w[l][o][i] + gw[l][o][i];
                    net[l].w[o][i] -= lr * vel.w[l][o][i];
                }
                vel.b[l][o] = mu * vel.b[l][o] + gb[l][o];
                net[l].b[o] -= lr * vel.b[l][o];
            }
        }
    }
}

}  // namespace ref
