#pragma once

// Independent reference implementations. Nothing here calls into the
// library's operators: plain loops over std::vector, or Eigen.

#include <cstddef>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

Matrix from_flat(const std::vector<double>& flat, std::size_t rows, std::size_t cols);
Matrix matmul(const Matrix& a, const Matrix& b);

/// Multi-head scaled dot-product attention with output projection; no
/// positive/negative mixing, no diversification.
Matrix plain_attention(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& wq, const Matrix& wk,
                       const Matrix& wv, const Matrix& wo, std::size_t heads);

struct DiversifyResult {
  std::vector<Matrix> a_final;
  std::vector<Matrix> a_divg;
  std::vector<double> coefficient;
  std::vector<double> beta;
  Matrix p_main;
};

DiversifyResult diversify(const std::vector<Matrix>& a_mix, double eps);

/// sigmoid(W2 gelu(W1 mean_rows(qh) + b1) + b2), row-vector weights [in x out].
double mixing_factor(const Matrix& qh, const Matrix& w1, const std::vector<double>& b1, const Matrix& w2,
                     double b2);

double gelu(double x);
double sigmoid(double x);

/// Same-padded cross-correlation of x [C_in x T] with kernel [C_out][C_in][kw].
Matrix conv1d(const Matrix& x, const std::vector<Matrix>& kernel, const std::vector<double>& bias);

/// x + gelu(bn2(conv2(gelu(bn1(conv1(x)))))) with eval-mode batch norm from
/// running statistics.
struct BnEval {
  std::vector<double> gamma, beta, mean, var;
  double eps = 1e-5;
};
Matrix residual_block_eval(const Matrix& x, const std::vector<Matrix>& k1, const std::vector<double>& b1,
                           const BnEval& bn1, const std::vector<Matrix>& k2, const std::vector<double>& b2,
                           const BnEval& bn2);

/// Tie-free Spearman via 1 - 6 sum d^2 / (n (n^2 - 1)).
double spearman_no_ties(const std::vector<double>& a, const std::vector<double>& b);

/// Ridge regression on [n x p] features, out-of-fold predictions over
/// `folds` contiguous folds of a seeded permutation, then tie-free Spearman
/// against y.
double linear_probe_scc(const Matrix& x, const std::vector<double>& y, std::size_t folds, double ridge,
                        unsigned seed);

}  // namespace oracle
