#include "boltznce/coupling.hpp"

#include <cmath>
#include <limits>

#include "boltznce/linalg.hpp"

namespace boltznce {

CouplingMode coupling_from_string(const std::string& s) {
    if (s == "ot") return CouplingMode::Ot;
    if (s == "independent") return CouplingMode::Independent;
    throw UsageError("unknown coupling mode '" + s + "' (expected \"ot\" or \"independent\")");
}

std::string to_string(CouplingMode m) { return m == CouplingMode::Ot ? "ot" : "independent"; }

std::vector<std::size_t> min_cost_assignment(const double* cost, std::size_t n) {
    require(n >= 1, "assignment: empty cost matrix");
    const double inf = std::numeric_limits<double>::infinity();
    // Column/row potentials with 1-based sentinel column 0.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), char(0));
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            std::size_t j1 = 0;
            double delta = inf;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
    return perm;
}

namespace {

double pair_cost(const double* a, const double* b, std::size_t dim) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

}  // namespace

Coupling hungarian_couple(const double* x0, const double* x1, std::size_t n, std::size_t dim) {
    require(n >= 1, "hungarian_couple: batches must be non-empty");
    std::vector<double> cost(n * n);
    parallel_for(n, 32, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i)
            for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = pair_cost(x0 + i * dim, x1 + j * dim, dim);
    });
    Coupling c;
    c.perm = min_cost_assignment(cost.data(), n);
    for (std::size_t i = 0; i < n; ++i) c.cost += cost[i * n + c.perm[i]];
    return c;
}

Coupling independent_couple(const double* x0, const double* x1, std::size_t n, std::size_t dim) {
    require(n >= 1, "independent_couple: batches must be non-empty");
    Coupling c;
    c.perm.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        c.perm[i] = i;
        c.cost += pair_cost(x0 + i * dim, x1 + i * dim, dim);
    }
    return c;
}

Coupling couple(CouplingMode mode, const double* x0, const double* x1, std::size_t n, std::size_t dim,
                std::size_t block) {
    if (mode == CouplingMode::Independent) return independent_couple(x0, x1, n, dim);
    if (block == 0 || block >= n) return hungarian_couple(x0, x1, n, dim);
    Coupling out;
    out.perm.resize(n);
    const std::size_t n_blocks = (n + block - 1) / block;
    std::vector<Coupling> parts(n_blocks);
    parallel_for(n_blocks, 1, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            const std::size_t begin = b * block;
            const std::size_t len = std::min(block, n - begin);
            parts[b] = hungarian_couple(x0 + begin * dim, x1 + begin * dim, len, dim);
        }
    });
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const std::size_t begin = b * block;
        for (std::size_t i = 0; i < parts[b].perm.size(); ++i) out.perm[begin + i] = begin + parts[b].perm[i];
        out.cost += parts[b].cost;
    }
    return out;
}

namespace {
std::size_t checked_rows(const std::vector<double>& x0, const std::vector<double>& x1, std::size_t dim) {
    require(dim >= 1, "coupling: dim must be positive");
    require(x0.size() % dim == 0 && x1.size() % dim == 0, "coupling: flat size not divisible by dim");
    require(x0.size() == x1.size(), "coupling: batch sizes differ");
    return x0.size() / dim;
}
}  // namespace

Coupling hungarian_couple(const std::vector<double>& x0, const std::vector<double>& x1, std::size_t dim) {
    return hungarian_couple(x0.data(), x1.data(), checked_rows(x0, x1, dim), dim);
}

Coupling independent_couple(const std::vector<double>& x0, const std::vector<double>& x1, std::size_t dim) {
    return independent_couple(x0.data(), x1.data(), checked_rows(x0, x1, dim), dim);
}

std::vector<double> apply_coupling(const Coupling& c, const std::vector<double>& x1, std::size_t dim) {
    const std::size_t n = c.perm.size();
    require(x1.size() == n * dim, "apply_coupling: size mismatch");
    std::vector<double> out(n * dim);
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(x1.data() + c.perm[i] * dim, dim, out.data() + i * dim);
    return out;
}

}  // namespace boltznce
