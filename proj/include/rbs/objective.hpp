#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rbs/common.hpp"
#include "rbs/scorer.hpp"

namespace rbs {

// ---------------------------------------------------------------------------
// Losses over one in-batch score matrix.
//
// Row i treats the diagonal entry as the chosen continuation and the B-1
// off-diagonal entries as rejected ones. The pairwise term -log sigma(m) is
// evaluated as softplus(-m) so large margins never overflow.
// ---------------------------------------------------------------------------

/// Average negative log-likelihood over all (chosen, rejected) comparisons:
/// (1/B) sum_i (1/(B-1)) sum_{j != i} softplus(-(S[i][i] - S[i][j])).
inline double bt_loss(const ScoreMatrix& s) {
  const std::size_t b = s.b;
  if (b < 2) throw ConfigError("bt_loss: batch size must be at least 2");
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double margin = s.at(i, i) - s.at(i, j);
      if (!std::isfinite(margin)) throw NumericError("bt_loss: non-finite score margin");
      row += softplus(-margin);
    }
    total += row / static_cast<double>(b - 1);
  }
  return total / static_cast<double>(b);
}

/// Two realizations of the quadratic score penalty:
/// - kPerRow: mean over rows of [S[i][i]^2 + (1/(B-1)) sum_{j != i} S[i][j]^2],
///   the displayed form; diagonal and off-diagonal entries carry equal
///   per-row weight.
/// - kJointMean: plain mean of S[i][j]^2 over all B^2 entries, matching a
///   joint average of the chosen and rejected score tensors.
enum class CenterVariant { kPerRow, kJointMean };

inline double center_loss(const ScoreMatrix& s, CenterVariant variant = CenterVariant::kPerRow) {
  const std::size_t b = s.b;
  if (b < 2) throw ConfigError("center_loss: batch size must be at least 2");
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double v = s.at(i, j);
      if (!std::isfinite(v)) throw NumericError("center_loss: non-finite score");
      const double sq = v * v;
      if (variant == CenterVariant::kJointMean) {
        total += sq / static_cast<double>(b * b);
      } else if (j == i) {
        total += sq / static_cast<double>(b);
      } else {
        total += sq / static_cast<double>(b * (b - 1));
      }
    }
  }
  return total;
}

struct LossBreakdown {
  double bt = 0.0;
  double center = 0.0;
  double c = 0.0;
  double total = 0.0;
};

inline LossBreakdown total_loss(const ScoreMatrix& s, double c,
                                CenterVariant variant = CenterVariant::kPerRow) {
  if (c < 0.0) throw ConfigError("total_loss: centering coefficient must be non-negative");
  LossBreakdown out;
  out.bt = bt_loss(s);
  out.center = center_loss(s, variant);
  out.c = c;
  out.total = out.bt + c * out.center;
  return out;
}

/// Bradley-Terry loss for one explicit (chosen, rejected) score pair.
inline double pairwise_bt_loss(double s_chosen, double s_rejected) {
  if (!std::isfinite(s_chosen) || !std::isfinite(s_rejected)) {
    throw NumericError("pairwise_bt_loss: non-finite input score");
  }
  return softplus(-(s_chosen - s_rejected));
}

// ---------------------------------------------------------------------------
// Analytic gradients through the factorized scorer.
// ---------------------------------------------------------------------------

namespace detail {

/// d total_loss / d S, same shape as the score matrix.
inline std::vector<double> loss_grad_wrt_scores(const ScoreMatrix& s, double c,
                                                CenterVariant variant) {
  const std::size_t b = s.b;
  std::vector<double> g(b * b, 0.0);
  const double w_bt = 1.0 / static_cast<double>(b * (b - 1));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i) {
        const double margin = s.at(i, i) - s.at(i, j);
        // d softplus(-m)/dm = -sigmoid(-m)
        const double d_margin = -w_bt * sigmoid(-margin);
        g[i * b + i] += d_margin;
        g[i * b + j] -= d_margin;
      }
      if (c != 0.0) {
        double w_center;
        if (variant == CenterVariant::kJointMean) {
          w_center = 1.0 / static_cast<double>(b * b);
        } else {
          w_center = j == i ? 1.0 / static_cast<double>(b)
                            : 1.0 / static_cast<double>(b * (b - 1));
        }
        g[i * b + j] += c * 2.0 * s.at(i, j) * w_center;
      }
    }
  }
  return g;
}

/// Backpropagates one head evaluation: adds w * d score(u, v) / d theta to
/// `grad` for the head parameters, and w * d score / d u (resp. v) to gu/gv.
inline void head_backward(const ScorerParams& params, std::span<const double> u,
                          std::span<const double> v, double w, std::span<double> grad,
                          std::span<double> gu, std::span<double> gv) {
  const std::size_t d = params.config.embed_dim;
  const double* th = params.theta.data();
  if (params.config.arch == ScorerArch::kBilinear) {
    const std::size_t w_off = params.config.embedding_count();
    const double* W = th + w_off;
    for (std::size_t i = 0; i < d; ++i) {
      const double* Wrow = W + i * d;
      double* Grow = grad.data() + w_off + i * d;
      double acc_u = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        Grow[j] += w * u[i] * v[j];
        acc_u += Wrow[j] * v[j];
        gv[j] += w * Wrow[j] * u[i];
      }
      gu[i] += w * acc_u;
    }
    grad[params.config.param_count() - 1] += w;  // bias
    return;
  }
  const std::size_t h = params.config.hidden_dim;
  const std::size_t w1_off = params.config.embedding_count();
  const double* W1 = th + w1_off;
  const double* b1 = W1 + h * 3 * d;
  const double* w2 = b1 + h;
  const std::size_t b1_off = w1_off + h * 3 * d;
  const std::size_t w2_off = b1_off + h;
  const std::size_t b2_off = w2_off + h;
  for (std::size_t i = 0; i < h; ++i) {
    const double* row = W1 + i * 3 * d;
    double pre = b1[i];
    for (std::size_t j = 0; j < d; ++j) {
      pre += row[j] * u[j] + row[d + j] * v[j] + row[2 * d + j] * u[j] * v[j];
    }
    const double hidden = std::tanh(pre);
    grad[w2_off + i] += w * hidden;
    const double dpre = w * w2[i] * (1.0 - hidden * hidden);
    grad[b1_off + i] += dpre;
    double* Grow = grad.data() + w1_off + i * 3 * d;
    for (std::size_t j = 0; j < d; ++j) {
      Grow[j] += dpre * u[j];
      Grow[d + j] += dpre * v[j];
      Grow[2 * d + j] += dpre * u[j] * v[j];
      gu[j] += dpre * (row[j] + row[2 * d + j] * v[j]);
      gv[j] += dpre * (row[d + j] + row[2 * d + j] * u[j]);
    }
  }
  grad[b2_off] += w;
}

/// Scatters an encoding gradient back onto the embedding rows of `seq`
/// (mean pooling distributes it uniformly over positions).
inline void scatter_embedding_grad(const ScorerParams& params, const TokenSequence& seq,
                                   std::span<const double> g_enc, std::span<double> grad) {
  const std::size_t d = params.config.embed_dim;
  const double inv = 1.0 / static_cast<double>(seq.size());
  for (TokenId t : seq) {
    double* row = grad.data() + static_cast<std::size_t>(t) * d;
    for (std::size_t k = 0; k < d; ++k) row[k] += g_enc[k] * inv;
  }
}

}  // namespace detail

/// One batch evaluation: scores, loss breakdown, and the exact gradient of
/// the total loss with respect to the flat parameter vector.
struct BatchEval {
  ScoreMatrix scores;
  LossBreakdown loss;
  std::vector<double> grad;
};

inline BatchEval eval_batch(const ScorerParams& params, std::span<const PrefixSuffixPair> batch,
                            double c, CenterVariant variant = CenterVariant::kPerRow) {
  if (batch.size() < 2) throw ConfigError("eval_batch: batch size must be at least 2");
  const std::size_t b = batch.size();
  const std::size_t d = params.config.embed_dim;

  BatchEval out;
  const EncodedBatch enc = encode_batch(params, batch);
  out.scores = score_matrix_from_encoded(params, enc);
  out.loss = total_loss(out.scores, c, variant);
  out.grad.assign(params.theta.size(), 0.0);

  const std::vector<double> g = detail::loss_grad_wrt_scores(out.scores, c, variant);
  std::vector<double> gu(b * d, 0.0);  // d loss / d u_i
  std::vector<double> gv(b * d, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double w = g[i * b + j];
      if (w == 0.0) continue;
      detail::head_backward(params, enc.u_row(i), enc.v_row(j), w, out.grad,
                            {gu.data() + i * d, d}, {gv.data() + j * d, d});
    }
  }
  for (std::size_t i = 0; i < b; ++i) {
    detail::scatter_embedding_grad(params, batch[i].prefix, {gu.data() + i * d, d}, out.grad);
    detail::scatter_embedding_grad(params, batch[i].suffix, {gv.data() + i * d, d}, out.grad);
  }
  for (std::size_t i = 0; i < out.grad.size(); ++i) {
    if (!std::isfinite(out.grad[i])) {
      const char* block = i < params.config.embedding_count() ? "embedding" : "head";
      throw NumericError("loss_gradient: non-finite gradient in " + std::string(block) +
                         " block at parameter " + std::to_string(i));
    }
  }
  return out;
}

/// Gradient of total_loss(score_matrix(params, batch), c) with respect to the
/// flat parameter vector.
inline std::vector<double> loss_gradient(const ScorerParams& params,
                                         std::span<const PrefixSuffixPair> batch, double c,
                                         CenterVariant variant = CenterVariant::kPerRow) {
  return eval_batch(params, batch, c, variant).grad;
}

// ---------------------------------------------------------------------------
// Curated preference path: explicit (prompt, chosen, rejected) triples.
// ---------------------------------------------------------------------------

struct TokenTriple {
  TokenSequence prompt;
  TokenSequence chosen;
  TokenSequence rejected;
};

struct CuratedEval {
  double bt = 0.0;
  double center = 0.0;  // mean of s_chosen^2 + s_rejected^2
  double total = 0.0;
  double mean_margin = 0.0;
  std::vector<double> grad;
};

/// Mean pairwise Bradley-Terry loss over the batch, plus the optional
/// quadratic score penalty on both scores, with the exact gradient.
inline CuratedEval eval_curated_batch(const ScorerParams& params,
                                      std::span<const TokenTriple> batch, double c) {
  if (batch.empty()) throw ConfigError("eval_curated_batch: empty batch");
  const std::size_t n = batch.size();
  const std::size_t d = params.config.embed_dim;
  CuratedEval out;
  out.grad.assign(params.theta.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (const auto& triple : batch) {
    const std::vector<double> p = encode(params, triple.prompt);
    const std::vector<double> ch = encode(params, triple.chosen);
    const std::vector<double> rj = encode(params, triple.rejected);
    const double s_c = detail::score_encoded(params, p, ch);
    const double s_r = detail::score_encoded(params, p, rj);
    if (!std::isfinite(s_c) || !std::isfinite(s_r)) {
      throw NumericError("eval_curated_batch: non-finite score");
    }
    const double margin = s_c - s_r;
    out.bt += pairwise_bt_loss(s_c, s_r) * inv_n;
    out.center += (s_c * s_c + s_r * s_r) * inv_n;
    out.mean_margin += margin * inv_n;

    const double d_margin = -sigmoid(-margin) * inv_n;
    const double w_c = d_margin + c * 2.0 * s_c * inv_n;
    const double w_r = -d_margin + c * 2.0 * s_r * inv_n;
    std::vector<double> gp(d, 0.0), gch(d, 0.0), grj(d, 0.0);
    detail::head_backward(params, p, ch, w_c, out.grad, gp, gch);
    detail::head_backward(params, p, rj, w_r, out.grad, gp, grj);
    detail::scatter_embedding_grad(params, triple.prompt, gp, out.grad);
    detail::scatter_embedding_grad(params, triple.chosen, gch, out.grad);
    detail::scatter_embedding_grad(params, triple.rejected, grj, out.grad);
  }
  out.total = out.bt + c * out.center;
  return out;
}

}  // namespace rbs
