#pragma once

#include <cmath>
#include <vector>

#include "duet/common.hpp"

namespace duet {

// Cyclic Jacobi eigendecomposition of a symmetric n x n matrix (row-major,
// double precision). Fills eigenvalues (ascending) and the matching
// eigenvectors as columns of v.
inline void jacobi_eigh(int n, std::vector<double> a, std::vector<double>& evals,
                        std::vector<double>& evecs) {
    check(int(a.size()) == n * n, "jacobi_eigh: matrix size mismatch");
    std::vector<double>& v = evecs;
    v.assign(size_t(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[size_t(i) * n + i] = 1.0;

    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[size_t(p) * n + q] * a[size_t(p) * n + q];
        if (off < 1e-26) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[size_t(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[size_t(p) * n + p];
                const double aqq = a[size_t(q) * n + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a[size_t(k) * n + p];
                    const double akq = a[size_t(k) * n + q];
                    a[size_t(k) * n + p] = c * akp - s * akq;
                    a[size_t(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[size_t(p) * n + k];
                    const double aqk = a[size_t(q) * n + k];
                    a[size_t(p) * n + k] = c * apk - s * aqk;
                    a[size_t(q) * n + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = v[size_t(k) * n + p];
                    const double vkq = v[size_t(k) * n + q];
                    v[size_t(k) * n + p] = c * vkp - s * vkq;
                    v[size_t(k) * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    evals.assign(size_t(n), 0.0);
    for (int i = 0; i < n; ++i) evals[size_t(i)] = a[size_t(i) * n + i];
    // sort ascending, carrying eigenvector columns along
    for (int i = 0; i < n; ++i) {
        int mi = i;
        for (int j = i + 1; j < n; ++j)
            if (evals[size_t(j)] < evals[size_t(mi)]) mi = j;
        if (mi != i) {
            std::swap(evals[size_t(i)], evals[size_t(mi)]);
            for (int k = 0; k < n; ++k)
                std::swap(v[size_t(k) * n + i], v[size_t(k) * n + mi]);
        }
    }
}

}  // namespace duet
