#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "eqrgan/market.hpp"
#include "eqrgan/metrics.hpp"
#include "eqrgan/paths.hpp"

namespace eqrgan::oracle {

using diffcore::Matrix;
using market::AgentSpec;
using market::MarketConfig;
using market::Roster;
namespace kernels = diffcore::kernels;

// Classical solution of the quadratic-cost equilibrium on the time grid.
//
// Joint state u_k = (phi_1..phi_N, B_k, 1). Each marginal-cost process is
// affine, Y_{n,k} = y_{n,k} . u_k, and with q=2 the trading rates Y/lambda
// make the state transition affine as well: u_{k+1} = A_k u_k + e_B dB_k.
// The backward recursion below solves the per-step self-consistency
//   y_{n,k} = A_k^T (y_{n,k+1} + dt * d_{n,k+1})
// (conditional expectation dropping the martingale increment exactly), with
// driver d from the clearing return; the price S_k = s_k . u_k is recovered
// backward from the terminal dividend and its Brownian loading is the
// equilibrium volatility. The volatility path is a damped fixed point.
struct AffineEquilibrium {
    int N = 0;
    int K = 0;
    double dt = 0.0;
    std::vector<Matrix<double>> Y;  // k=0..K, N x (N+2); rows are y_{n,k}
    std::vector<Matrix<double>> A;  // k=0..K-1, (N+2) x (N+2)
    std::vector<std::vector<double>> s;  // k=0..K, price coefficients, size N+2
    std::vector<double> sigma;           // k=0..K
    std::vector<double> phi0;            // initial positions
    double S0 = 0.0;
    int iterations = 0;
};

namespace detail {

// Solve M X = B in place with partial pivoting; M is n x n, B is n x m.
inline void lu_solve(Matrix<double> M, Matrix<double>& B) {
    const int n = M.rows;
    std::vector<int> piv(n);
    for (int i = 0; i < n; ++i) piv[i] = i;
    for (int col = 0; col < n; ++col) {
        int best = col;
        for (int i = col + 1; i < n; ++i)
            if (std::abs(M(i, col)) > std::abs(M(best, col))) best = i;
        if (M(best, col) == 0.0) throw NumericalError("oracle: singular step matrix");
        if (best != col) {
            for (int j = 0; j < n; ++j) std::swap(M(col, j), M(best, j));
            for (int j = 0; j < B.cols; ++j) std::swap(B(col, j), B(best, j));
        }
        const double inv = 1.0 / M(col, col);
        for (int i = col + 1; i < n; ++i) {
            const double f = M(i, col) * inv;
            if (f == 0.0) continue;
            for (int j = col; j < n; ++j) M(i, j) -= f * M(col, j);
            for (int j = 0; j < B.cols; ++j) B(i, j) -= f * B(col, j);
        }
    }
    for (int col = n - 1; col >= 0; --col) {
        const double inv = 1.0 / M(col, col);
        for (int j = 0; j < B.cols; ++j) B(col, j) *= inv;
        for (int i = 0; i < col; ++i) {
            const double f = M(i, col);
            if (f == 0.0) continue;
            for (int j = 0; j < B.cols; ++j) B(i, j) -= f * B(col, j);
        }
    }
}

// Coefficients of the clearing return mu_k = m . u given sigma at that knot.
inline std::vector<double> mu_coefficients(double sigma, const Roster& roster) {
    const int N = static_cast<int>(roster.size());
    std::vector<double> m(N + 2, 0.0);
    double gx = 0.0;
    for (int i = 0; i < N; ++i) {
        m[i] = roster[i].gamma * sigma * sigma / N;
        gx += roster[i].gamma * roster[i].xi;
    }
    m[N] = sigma * gx / N;
    return m;
}

}  // namespace detail

// Number of integrand samples in the discretized objective: the left Riemann
// sum over knots 0..K-1, each weighted by dt. This is the convention under
// which doubling K moves the objective by O(dt); the trained rollouts use the
// same knots. The terminal knot carries no decision weight: trading at T is
// pure cost, so the optimal terminal rate is zero either way.
inline int objective_knots(int K) { return K; }

inline AffineEquilibrium solve_quadratic(const MarketConfig& cfg, const Roster& roster,
                                         int max_iter = 500, double tol = 1e-10) {
    if (cfg.q != 2.0) throw ConfigError("oracle: closed-form recursion requires q = 2");
    const auto violations = market::validate(cfg, roster);
    if (!violations.empty())
        throw ConfigError("oracle: invalid configuration: " +
                          market::violations_to_string(violations));

    const int N = static_cast<int>(roster.size());
    const int dim = N + 2;
    const int K = cfg.K;
    const double dt = cfg.T / K;
    const int bcol = N;      // Brownian column
    const int ccol = N + 1;  // constant column

    AffineEquilibrium eq;
    eq.N = N;
    eq.K = K;
    eq.dt = dt;
    eq.sigma.assign(K + 1, cfg.alpha);
    eq.phi0.resize(N);
    for (int n = 0; n < N; ++n) eq.phi0[n] = market::initial_position(roster[n], roster, cfg);

    eq.Y.assign(K + 1, Matrix<double>(N, dim));
    eq.A.assign(K, Matrix<double>(dim, dim));
    eq.s.assign(K + 1, std::vector<double>(dim, 0.0));

    const double rate = dt / cfg.lambda;
    std::vector<double> sigma_new(K + 1, cfg.alpha);

    for (int iter = 1; iter <= max_iter; ++iter) {
        // Backward marginal-cost coefficients; Y at the horizon vanishes.
        eq.Y[K].set_zero();
        for (int k = K - 1; k >= 0; --k) {
            const double sg = eq.sigma[k + 1];
            const std::vector<double> m = detail::mu_coefficients(sg, roster);
            Matrix<double> G = eq.Y[k + 1];
            for (int n = 0; n < N; ++n) {
                double* gn = G.row(n);
                for (int i = 0; i < N; ++i) gn[i] += dt * m[i];
                gn[bcol] += dt * m[bcol];
                gn[n] -= dt * roster[n].gamma * sg * sg;
                gn[bcol] -= dt * roster[n].gamma * sg * roster[n].xi;
            }
            Matrix<double> M(N, N);
            for (int n = 0; n < N; ++n)
                for (int i = 0; i < N; ++i) M(n, i) = (n == i ? 1.0 : 0.0) - rate * G(n, i);
            detail::lu_solve(std::move(M), G);
            eq.Y[k] = std::move(G);

            Matrix<double>& A = eq.A[k];
            A.set_zero();
            for (int i = 0; i < dim; ++i) A(i, i) = 1.0;
            for (int n = 0; n < N; ++n)
                for (int j = 0; j < dim; ++j) A(n, j) += rate * eq.Y[k](n, j);
        }

        // Backward price coefficients from the terminal dividend.
        std::fill(eq.s[K].begin(), eq.s[K].end(), 0.0);
        eq.s[K][bcol] = cfg.alpha;
        eq.s[K][ccol] = cfg.beta * cfg.T;
        for (int k = K - 1; k >= 0; --k) {
            const std::vector<double> m = detail::mu_coefficients(eq.sigma[k], roster);
            const Matrix<double>& A = eq.A[k];
            for (int j = 0; j < dim; ++j) {
                double acc = 0.0;
                for (int i = 0; i < dim; ++i) acc += A(i, j) * eq.s[k + 1][i];
                eq.s[k][j] = acc - dt * m[j];
            }
        }

        for (int k = 0; k < K; ++k) sigma_new[k] = eq.s[k + 1][bcol];
        sigma_new[K] = cfg.alpha;
        double delta = 0.0;
        for (int k = 0; k <= K; ++k) delta = std::max(delta, std::abs(sigma_new[k] - eq.sigma[k]));
        for (int k = 0; k <= K; ++k) eq.sigma[k] += 0.5 * (sigma_new[k] - eq.sigma[k]);
        eq.iterations = iter;
        if (delta <= tol) {
            eq.S0 = eq.s[0][ccol];
            for (int n = 0; n < N; ++n) eq.S0 += eq.s[0][n] * eq.phi0[n];
            return eq;
        }
    }
    double delta = 0.0;
    for (int k = 0; k <= K; ++k) delta = std::max(delta, std::abs(sigma_new[k] - eq.sigma[k]));
    throw NumericalError("oracle: volatility fixed point did not converge in " +
                         std::to_string(max_iter) + " iterations (residual " +
                         std::to_string(delta) + ")");
}

// Internal consistency diagnostics carried alongside the Monte Carlo report.
struct OracleDiagnostics {
    double max_clearing_abs = 0.0;  // max |sum_n phidot| over steps and paths
    double max_terminal_abs = 0.0;  // max |S_K - dividend| over paths
};

inline EvalReport evaluate(const AffineEquilibrium& eq, const MarketConfig& cfg,
                           const Roster& roster, int n_paths, uint64_t seed,
                           OracleDiagnostics* diag = nullptr) {
    const int N = eq.N;
    const int K = eq.K;
    const double dt = eq.dt;
    const paths::TimeGrid grid{K, cfg.T};
    const auto pb = paths::sample<double>(seed, n_paths, grid);

    double sum_J = 0.0, clearing = 0.0, terminal = 0.0;
    OracleDiagnostics d;

    std::vector<double> u(N + 2), ydot(N);
    for (int p = 0; p < n_paths; ++p) {
        for (int n = 0; n < N; ++n) u[n] = eq.phi0[n];
        u[N] = 0.0;
        u[N + 1] = 1.0;
        double S = eq.S0;
        double J = 0.0;
        const double* B = pb.levels(p);
        const double* dB = pb.increments(p);
        for (int k = 0; k <= K; ++k) {
            u[N] = B[k];
            const double sg = eq.sigma[k];
            const std::vector<double> m = detail::mu_coefficients(sg, roster);
            double mu = 0.0;
            for (int i = 0; i < N + 2; ++i) mu += m[i] * u[i];
            double rate_sum = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* yn = eq.Y[k].row(n);
                double Y = 0.0;
                for (int i = 0; i < N + 2; ++i) Y += yn[i] * u[i];
                ydot[n] = Y / cfg.lambda;
                rate_sum += ydot[n];
                const double expo = u[n] * sg + roster[n].xi * B[k];
                if (k < objective_knots(K))
                    J += dt * (u[n] * mu - 0.5 * roster[n].gamma * expo * expo -
                               market::cost(ydot[n], cfg.lambda, cfg.q));
            }
            clearing += rate_sum * rate_sum;
            d.max_clearing_abs = std::max(d.max_clearing_abs, std::abs(rate_sum));
            if (k < K) {
                S += mu * dt + sg * dB[k];
                for (int n = 0; n < N; ++n) u[n] += ydot[n] * dt;
            }
        }
        const double mismatch = S - market::terminal_dividend(B[K], cfg);
        terminal += mismatch * mismatch;
        d.max_terminal_abs = std::max(d.max_terminal_abs, std::abs(mismatch));
        sum_J += J;
    }

    EvalReport r;
    r.sum_J = sum_J / n_paths;
    r.clearing_sq = clearing / (static_cast<double>(n_paths) * (K + 1));
    r.terminal_sq = terminal / n_paths;
    r.S0 = eq.S0;
    r.n_paths = n_paths;
    r.seed = seed;
    if (diag) *diag = d;
    return r;
}

// Exact E[sum_n J_n] through the second moments of the affine state; no
// Monte Carlo error. Serves as the cross-check for evaluate().
inline double exact_sum_J(const AffineEquilibrium& eq, const MarketConfig& cfg,
                          const Roster& roster) {
    const int N = eq.N;
    const int dim = N + 2;
    const int K = eq.K;
    const double dt = eq.dt;

    Matrix<double> M(dim, dim);  // E[u u^T]
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) M(i, j) = eq.phi0[i] * eq.phi0[j];
    for (int i = 0; i < N; ++i) M(i, N + 1) = M(N + 1, i) = eq.phi0[i];
    M(N + 1, N + 1) = 1.0;

    auto quad = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (int i = 0; i < dim; ++i) {
            double row = 0.0;
            for (int j = 0; j < dim; ++j) row += M(i, j) * b[j];
            acc += a[i] * row;
        }
        return acc;
    };

    double sum_J = 0.0;
    Matrix<double> tmp(dim, dim), next(dim, dim);
    std::vector<double> en(dim, 0.0), v(dim, 0.0), yv(dim, 0.0);
    for (int k = 0; k <= K; ++k) {
        const double sg = eq.sigma[k];
        const std::vector<double> m = detail::mu_coefficients(sg, roster);
        if (k < objective_knots(K)) {
            for (int n = 0; n < N; ++n) {
                std::fill(en.begin(), en.end(), 0.0);
                en[n] = 1.0;
                std::fill(v.begin(), v.end(), 0.0);
                v[n] = sg;
                v[N] = roster[n].xi;
                for (int i = 0; i < dim; ++i) yv[i] = eq.Y[k](n, i);
                const double e_phimu = quad(en, m);
                const double e_risk = quad(v, v);
                const double e_cost = quad(yv, yv) / (cfg.lambda * cfg.lambda);
                sum_J += dt * (e_phimu - 0.5 * roster[n].gamma * e_risk -
                               cfg.lambda / cfg.q * e_cost);
            }
        }
        if (k == K) break;
        // M <- A M A^T + dt e_B e_B^T
        const Matrix<double>& A = eq.A[k];
        kernels::gemm(A, M, tmp);
        next.set_zero();
        for (int i = 0; i < dim; ++i)
            for (int l = 0; l < dim; ++l) {
                const double t = tmp(i, l);
                for (int j = 0; j < dim; ++j) next(i, j) += t * A(j, l);
            }
        next(N, N) += dt;
        M = next;
    }
    return sum_J;
}

inline void dump_csv(const AffineEquilibrium& eq, const Roster& roster, const MarketConfig& cfg,
                     const std::string& file) {
    std::ofstream os(file);
    if (!os) throw IoError("oracle::dump_csv: cannot open " + file);
    const int N = eq.N;
    os << "k,t,sigma";
    for (int i = 0; i < N; ++i) os << ",mu_c_phi" << (i + 1);
    os << ",mu_c_B,mu_c_const,S_c_B,S_c_const\n";
    for (int k = 0; k <= eq.K; ++k) {
        const std::vector<double> m = detail::mu_coefficients(eq.sigma[k], roster);
        os << k << ',' << k * cfg.T / eq.K << ',' << eq.sigma[k];
        for (int i = 0; i < N + 2; ++i) os << ',' << m[i];
        os << ',' << eq.s[k][N] << ',' << eq.s[k][N + 1] << '\n';
    }
}

}  // namespace eqrgan::oracle
