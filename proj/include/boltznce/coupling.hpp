#pragma once

#include <string>
#include <vector>

#include "boltznce/common.hpp"

namespace boltznce {

enum class CouplingMode { Ot, Independent };

CouplingMode coupling_from_string(const std::string& s);
std::string to_string(CouplingMode m);

/// Batch pairing x0[i] <-> x1[perm[i]] with its squared-Euclidean transport cost.
struct Coupling {
    std::vector<std::size_t> perm;
    double cost = 0.0;
};

/// Minimum-cost assignment for a dense square cost matrix [n x n],
/// shortest-augmenting-path (Jonker-Volgenant), O(n^3). Ties resolve to the
/// lowest scanned index, so results are deterministic.
std::vector<std::size_t> min_cost_assignment(const double* cost, std::size_t n);

/// Optimal pairing of two equal-size batches under squared Euclidean cost.
Coupling hungarian_couple(const double* x0, const double* x1, std::size_t n, std::size_t dim);

/// Identity pairing (samples kept as drawn), with its cost.
Coupling independent_couple(const double* x0, const double* x1, std::size_t n, std::size_t dim);

/// Coupling for training batches. block = 0 couples the whole batch at
/// once; otherwise the assignment runs on consecutive blocks of that size
/// (the O(block^3) solves dominate training cost on large batches).
Coupling couple(CouplingMode mode, const double* x0, const double* x1, std::size_t n, std::size_t dim,
                std::size_t block = 0);

// Vector conveniences (row-major [n x dim]).
Coupling hungarian_couple(const std::vector<double>& x0, const std::vector<double>& x1, std::size_t dim);
Coupling independent_couple(const std::vector<double>& x0, const std::vector<double>& x1, std::size_t dim);

/// Reorders x1 rows so row i pairs with x0 row i.
std::vector<double> apply_coupling(const Coupling& c, const std::vector<double>& x1, std::size_t dim);

}  // namespace boltznce
