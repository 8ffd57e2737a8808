#include <algorithm>
#include <deque>
#include <vector>

#include "fedtcd/synth.hpp"

namespace fedtcd {

namespace {

// Time-unrolled DAG over nodes (s, d), s in [0, horizon].  Warm-up slices
// (s < L) have no parents.
class UnrolledGraph {
public:
    UnrolledGraph(const ScenarioSpec& spec, const Structure& st, std::size_t horizon)
        : D_(spec.D), nodes_((horizon + 1) * spec.D), parents_(nodes_), children_(nodes_) {
        for (std::size_t s = spec.L; s <= horizon; ++s) {
            for (std::size_t d = 0; d < D_; ++d) {
                for (std::size_t i = 0; i < D_; ++i)
                    if (st.W(s, i, d) != 0.0) link(id(s, i), id(s, d));
                for (std::size_t tau = 0; tau < spec.L; ++tau)
                    for (std::size_t i = 0; i < D_; ++i)
                        if (st.A(tau, i, d) != 0.0) link(id(s - tau - 1, i), id(s, d));
            }
        }
    }

    std::size_t id(std::size_t s, std::size_t d) const { return s * D_ + d; }

    // Reachability with the active-trail rules (Koller & Friedman, Alg. 3.1).
    bool d_connected(std::size_t x, std::size_t y, const std::vector<char>& given) const {
        std::vector<char> anc = given;
        std::vector<std::size_t> stack;
        for (std::size_t v = 0; v < nodes_; ++v)
            if (given[v]) stack.push_back(v);
        while (!stack.empty()) {
            const std::size_t v = stack.back();
            stack.pop_back();
            for (auto p : parents_[v])
                if (!anc[p]) anc[p] = 1, stack.push_back(p);
        }
        enum : int { kUp = 0, kDown = 1 };
        std::vector<char> seen(2 * nodes_, 0);
        std::deque<std::pair<std::size_t, int>> queue{{x, kUp}};
        while (!queue.empty()) {
            auto [v, dir] = queue.front();
            queue.pop_front();
            if (seen[2 * v + dir]) continue;
            seen[2 * v + dir] = 1;
            if (v == y && !given[v] && v != x) return true;
            if (dir == kUp && !given[v]) {
                for (auto p : parents_[v]) queue.emplace_back(p, kUp);
                for (auto c : children_[v]) queue.emplace_back(c, kDown);
            } else if (dir == kDown) {
                if (!given[v])
                    for (auto c : children_[v]) queue.emplace_back(c, kDown);
                if (anc[v])
                    for (auto p : parents_[v]) queue.emplace_back(p, kUp);
            }
        }
        return false;
    }

    std::size_t size() const { return nodes_; }

private:
    void link(std::size_t from, std::size_t to) {
        parents_[to].push_back(from);
        children_[from].push_back(to);
    }

    std::size_t D_;
    std::size_t nodes_;
    std::vector<std::vector<std::size_t>> parents_, children_;
};

bool is_confounded(const ScenarioSpec& spec, std::size_t i, std::size_t j, std::size_t t) {
    return std::any_of(spec.confounded_edges.begin(), spec.confounded_edges.end(), [&](const ConfoundedEdge& c) {
        return c.window.contains(t) && ((c.from == i && c.to == j) || (c.from == j && c.to == i));
    });
}

bool is_inconsistent(const ScenarioSpec& spec, std::size_t lag, std::size_t i, std::size_t j, std::size_t t,
                     bool directed) {
    return std::any_of(spec.inconsistent_edges.begin(), spec.inconsistent_edges.end(), [&](const InconsistentEdge& e) {
        if (e.lag != lag || e.zero_clients.empty()) return false;
        // Lag priors are static: a lag edge switched off anywhere counts.
        if (lag == 0 && !e.window.contains(t)) return false;
        return (e.from == i && e.to == j) || (!directed && e.from == j && e.to == i);
    });
}

}  // namespace

OracleMasks oracle_masks(const ScenarioSpec& spec) { return oracle_masks(spec, build_structure(spec)); }

OracleMasks oracle_masks(const ScenarioSpec& spec, const Structure& st) {
    const std::size_t D = spec.D, T = spec.T, L = spec.L;
    OracleMasks out{Mask3(T, D, D), Mask3(T, D, D), Mask3(L, D, D), Mask3(L, D, D)};

    for (std::size_t t = L; t < T; ++t) {
        const UnrolledGraph g(spec, st, t);
        for (std::size_t i = 0; i < D; ++i) {
            for (std::size_t j = i + 1; j < D; ++j) {
                const bool edge = st.W(t, i, j) != 0.0 || st.W(t, j, i) != 0.0;
                bool keep = edge;
                if (!keep && !is_confounded(spec, i, j, t)) {
                    std::vector<char> given(g.size(), 0);
                    for (std::size_t d = 0; d < D; ++d)
                        if (d != i && d != j) given[g.id(t, d)] = 1;
                    keep = g.d_connected(g.id(t, i), g.id(t, j), given);
                }
                const std::uint8_t s = keep ? 1 : 0;
                const std::uint8_t l = (keep && is_inconsistent(spec, 0, i, j, t, false)) ? 1 : 0;
                out.S(t, i, j) = out.S(t, j, i) = s;
                out.L(t, i, j) = out.L(t, j, i) = l;
            }
        }
    }
    // Warm-up slices inherit the first lagged slice, as the priors do.
    for (std::size_t t = 0; t < std::min(L, T); ++t) {
        std::copy_n(out.S.slice(L), D * D, out.S.slice(t));
        std::copy_n(out.L.slice(L), D * D, out.L.slice(t));
    }

    if (L > 0) {
        const std::size_t t_ref = T - 1;
        const UnrolledGraph g(spec, st, t_ref);
        for (std::size_t tau = 0; tau < L; ++tau) {
            for (std::size_t i = 0; i < D; ++i) {
                for (std::size_t j = 0; j < D; ++j) {
                    bool keep = st.A(tau, i, j) != 0.0;
                    if (!keep) {
                        std::vector<char> given(g.size(), 0);
                        for (std::size_t d = 0; d < D; ++d)
                            if (d != j) given[g.id(t_ref, d)] = 1;
                        keep = g.d_connected(g.id(t_ref - tau - 1, i), g.id(t_ref, j), given);
                    }
                    out.S_A(tau, i, j) = keep ? 1 : 0;
                    out.L_A(tau, i, j) = (keep && is_inconsistent(spec, tau + 1, i, j, t_ref, true)) ? 1 : 0;
                }
            }
        }
    }
    return out;
}

}  // namespace fedtcd
