#include "msopt/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "msopt/kernels.hpp"

namespace msopt {

namespace {

constexpr double kStdFloor = 1e-8;
constexpr double kLnEps = 1e-5;

struct Mat {
  std::size_t rows = 0, cols = 0;
  Vec data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// C = A * B
void matmul(const Mat& a, const Mat& b, Mat& c) {
  c = Mat(a.rows, b.cols);
  kernels::gemm_nn(c.data.data(), a.data.data(), b.data.data(), a.rows, a.cols,
                   b.cols, false);
}

// C += A^T * B
void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c) {
  kernels::gemm_tn(c.data.data(), a.data.data(), b.data.data(), a.cols, a.rows,
                   b.cols, true);
}

// C = A * B^T
void matmul_nt(const Mat& a, const Mat& b, Mat& c) {
  c = Mat(a.rows, b.rows);
  kernels::gemm_nt(c.data.data(), a.data.data(), b.data.data(), a.rows, a.cols,
                   b.rows, false);
}

void add_row_inplace(Mat& m, const Vec& bias) {
  for (std::size_t i = 0; i < m.rows; ++i)
    kernels::add(m.row(i), m.row(i), bias.data(), m.cols);
}

Mat as_mat(const Tensor& t) {
  Mat m(t.rows(), t.cols());
  m.data = t.values;
  return m;
}

void softmax_row(double* row, std::size_t n) {
  double mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
}

double positional_encoding(std::size_t pos, std::size_t dim, std::size_t d_model) {
  const double exponent = static_cast<double>(2 * (dim / 2)) / d_model;
  const double angle = pos / std::pow(10000.0, exponent);
  return dim % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

struct LayerCache {
  Mat x_in, q, k, v, ctx, attn_out, res1, x_ln1, ff1, relu_out, ff2, res2, x_out;
  std::vector<Mat> probs;  // per head
  Vec ln1_mu, ln1_rstd, ln2_mu, ln2_rstd;
  Mat drop_attn, drop_ff;  // inverted dropout masks (empty = off)
};

struct ForwardCache {
  Vec conditioning;
  std::vector<Vec> tokens;  // standardized token rows
  Mat embedded;
  std::vector<LayerCache> layers;
  Mat head_in, head_out;
};

void layer_norm(const Mat& x, const Tensor& gain, const Tensor& bias, Mat& out,
                Vec& mu, Vec& rstd) {
  out = Mat(x.rows, x.cols);
  mu.assign(x.rows, 0.0);
  rstd.assign(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) m += x.at(i, j);
    m /= x.cols;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double d = x.at(i, j) - m;
      var += d * d;
    }
    var /= x.cols;
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    mu[i] = m;
    rstd[i] = rs;
    for (std::size_t j = 0; j < x.cols; ++j)
      out.at(i, j) = gain.values[j] * (x.at(i, j) - m) * rs + bias.values[j];
  }
}

void layer_norm_backward(const Mat& x, const Tensor& gain, const Vec& mu,
                         const Vec& rstd, const Mat& dy, Mat& dx, Tensor& dgain,
                         Tensor& dbias) {
  dx = Mat(x.rows, x.cols);
  const std::size_t n = x.cols;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (x.at(i, j) - mu[i]) * rstd[i];
      const double dxhat = dy.at(i, j) * gain.values[j];
      dgain.grad[j] += dy.at(i, j) * xhat;
      dbias.grad[j] += dy.at(i, j);
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= n;
    mean_dxhat_xhat /= n;
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (x.at(i, j) - mu[i]) * rstd[i];
      const double dxhat = dy.at(i, j) * gain.values[j];
      dx.at(i, j) = rstd[i] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
  }
}

Mat slice_cols(const Mat& m, std::size_t c0, std::size_t width) {
  Mat out(m.rows, width);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < width; ++j) out.at(i, j) = m.at(i, c0 + j);
  return out;
}

void scatter_cols_add(Mat& dst, const Mat& src, std::size_t c0) {
  for (std::size_t i = 0; i < src.rows; ++i)
    for (std::size_t j = 0; j < src.cols; ++j) dst.at(i, c0 + j) += src.at(i, j);
}

class Decoder {
 public:
  Decoder(const ModelCheckpoint& ckpt) : ckpt_(ckpt), cfg_(ckpt.config) {}

  Vec standardize_token(const SequenceElement& el) const {
    const NormStats& ns = ckpt_.norm;
    Vec tok(cfg_.token_dim(), 0.0);
    for (int d = 0; d < cfg_.state_dim; ++d)
      tok[d] = (el.beta[d] - ns.beta_mean[d]) / std::max(ns.beta_std[d], kStdFloor);
    tok[cfg_.state_dim] =
        (el.alpha - ns.alpha_mean) / std::max(ns.alpha_std, kStdFloor);
    tok[cfg_.state_dim + 1 + static_cast<int>(el.token)] = 1.0;
    return tok;
  }

  void forward(const Vec& conditioning, std::span<const SequenceElement> prefix,
               ForwardCache& fc, Rng* dropout_rng) const {
    if (static_cast<int>(conditioning.size()) != cfg_.input_dim)
      throw std::invalid_argument("conditioning dimension mismatch");
    if (1 + prefix.size() > static_cast<std::size_t>(cfg_.max_seq_len))
      throw std::invalid_argument("sequence length exceeds max_seq_len");

    const std::size_t rows = 1 + prefix.size();
    const std::size_t d = cfg_.d_model;
    fc.conditioning = conditioning;
    fc.tokens.clear();
    for (const auto& el : prefix) fc.tokens.push_back(standardize_token(el));

    fc.embedded = Mat(rows, d);
    {
      const Mat wc = as_mat(ckpt_.params.at("cond.w"));
      const auto& bc = ckpt_.params.at("cond.b").values;
      for (std::size_t j = 0; j < d; ++j) {
        double s = bc[j];
        for (int i = 0; i < cfg_.input_dim; ++i)
          s += conditioning[i] * wc.at(i, j);
        fc.embedded.at(0, j) = s;
      }
      const Mat we = as_mat(ckpt_.params.at("emb.w"));
      const auto& be = ckpt_.params.at("emb.b").values;
      for (std::size_t p = 0; p < prefix.size(); ++p) {
        for (std::size_t j = 0; j < d; ++j) {
          double s = be[j] + positional_encoding(p, j, d);
          for (int i = 0; i < cfg_.token_dim(); ++i)
            s += fc.tokens[p][i] * we.at(i, j);
          fc.embedded.at(p + 1, j) = s;
        }
      }
    }

    Mat x = fc.embedded;
    fc.layers.assign(cfg_.n_layers, {});
    for (int l = 0; l < cfg_.n_layers; ++l)
      x = layer_forward(l, x, fc.layers[l], dropout_rng);

    fc.head_in = x;
    const Mat wh = as_mat(ckpt_.params.at("head.w"));
    matmul(x, wh, fc.head_out);
    add_row_inplace(fc.head_out, ckpt_.params.at("head.b").values);

    for (double v : fc.head_out.data)
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite activation in decoder forward");
  }

  Mat layer_forward(int l, const Mat& x, LayerCache& lc, Rng* dropout_rng) const {
    const std::string p = "layer" + std::to_string(l) + ".";
    const std::size_t d = cfg_.d_model;
    const int heads = cfg_.n_heads;
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    lc.x_in = x;
    matmul(x, as_mat(ckpt_.params.at(p + "attn.wq")), lc.q);
    add_row_inplace(lc.q, ckpt_.params.at(p + "attn.bq").values);
    matmul(x, as_mat(ckpt_.params.at(p + "attn.wk")), lc.k);
    add_row_inplace(lc.k, ckpt_.params.at(p + "attn.bk").values);
    matmul(x, as_mat(ckpt_.params.at(p + "attn.wv")), lc.v);
    add_row_inplace(lc.v, ckpt_.params.at(p + "attn.bv").values);

    lc.ctx = Mat(x.rows, d);
    lc.probs.assign(heads, Mat());
    for (int h = 0; h < heads; ++h) {
      const Mat qh = slice_cols(lc.q, h * dh, dh);
      const Mat kh = slice_cols(lc.k, h * dh, dh);
      const Mat vh = slice_cols(lc.v, h * dh, dh);
      Mat scores;
      matmul_nt(qh, kh, scores);
      for (auto& s : scores.data) s *= inv_sqrt;
      for (std::size_t i = 0; i < scores.rows; ++i) {
        for (std::size_t j = i + 1; j < scores.cols; ++j)
          scores.at(i, j) = -std::numeric_limits<double>::infinity();
        softmax_row(scores.row(i), i + 1);
        for (std::size_t j = i + 1; j < scores.cols; ++j) scores.at(i, j) = 0.0;
      }
      Mat ctx_h;
      matmul(scores, vh, ctx_h);
      scatter_cols_add(lc.ctx, ctx_h, h * dh);
      lc.probs[h] = std::move(scores);
    }

    matmul(lc.ctx, as_mat(ckpt_.params.at(p + "attn.wo")), lc.attn_out);
    add_row_inplace(lc.attn_out, ckpt_.params.at(p + "attn.bo").values);
    apply_dropout(lc.attn_out, lc.drop_attn, dropout_rng);

    lc.res1 = lc.x_in;
    kernels::add(lc.res1.data.data(), lc.res1.data.data(), lc.attn_out.data.data(),
                 lc.res1.data.size());
    layer_norm(lc.res1, ckpt_.params.at(p + "ln1.g"), ckpt_.params.at(p + "ln1.b"),
               lc.x_ln1, lc.ln1_mu, lc.ln1_rstd);

    matmul(lc.x_ln1, as_mat(ckpt_.params.at(p + "ff.w1")), lc.ff1);
    add_row_inplace(lc.ff1, ckpt_.params.at(p + "ff.b1").values);
    lc.relu_out = lc.ff1;
    for (auto& v : lc.relu_out.data) v = std::max(v, 0.0);
    matmul(lc.relu_out, as_mat(ckpt_.params.at(p + "ff.w2")), lc.ff2);
    add_row_inplace(lc.ff2, ckpt_.params.at(p + "ff.b2").values);
    apply_dropout(lc.ff2, lc.drop_ff, dropout_rng);

    lc.res2 = lc.x_ln1;
    kernels::add(lc.res2.data.data(), lc.res2.data.data(), lc.ff2.data.data(),
                 lc.res2.data.size());
    layer_norm(lc.res2, ckpt_.params.at(p + "ln2.g"), ckpt_.params.at(p + "ln2.b"),
               lc.x_out, lc.ln2_mu, lc.ln2_rstd);
    return lc.x_out;
  }

  void apply_dropout(Mat& m, Mat& mask, Rng* rng) const {
    if (cfg_.dropout_rate <= 0.0 || rng == nullptr) return;
    mask = Mat(m.rows, m.cols);
    const double keep = 1.0 - cfg_.dropout_rate;
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      mask.data[i] = rng->next_double() < keep ? 1.0 / keep : 0.0;
      m.data[i] *= mask.data[i];
    }
  }

  // dOut: gradient w.r.t. head_out rows. Accumulates parameter grads.
  void backward(const ForwardCache& fc, const Mat& d_out, ParamSet& grads) const {
    const std::size_t d = cfg_.d_model;

    Mat dx;
    {
      Tensor& dwh = grads.at("head.w");
      Tensor& dbh = grads.at("head.b");
      Mat dwh_m(d, cfg_.out_dim());
      dwh_m.data = dwh.grad;
      matmul_tn_acc(fc.head_in, d_out, dwh_m);
      dwh.grad = dwh_m.data;
      for (std::size_t i = 0; i < d_out.rows; ++i)
        kernels::add(dbh.grad.data(), dbh.grad.data(), d_out.row(i), d_out.cols);
      const Mat wh = as_mat(ckpt_.params.at("head.w"));
      matmul_nt(d_out, wh, dx);
    }

    for (int l = cfg_.n_layers - 1; l >= 0; --l)
      dx = layer_backward(l, fc.layers[l], dx, grads);

    // Embedding gradients.
    Tensor& dwc = grads.at("cond.w");
    Tensor& dbc = grads.at("cond.b");
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dx.at(0, j);
      dbc.grad[j] += g;
      for (int i = 0; i < cfg_.input_dim; ++i)
        dwc.grad[i * d + j] += fc.conditioning[i] * g;
    }
    Tensor& dwe = grads.at("emb.w");
    Tensor& dbe = grads.at("emb.b");
    for (std::size_t pidx = 0; pidx < fc.tokens.size(); ++pidx) {
      for (std::size_t j = 0; j < d; ++j) {
        const double g = dx.at(pidx + 1, j);
        dbe.grad[j] += g;
        for (int i = 0; i < cfg_.token_dim(); ++i)
          dwe.grad[i * d + j] += fc.tokens[pidx][i] * g;
      }
    }
  }

  Mat layer_backward(int l, const LayerCache& lc, const Mat& d_out,
                     ParamSet& grads) const {
    const std::string p = "layer" + std::to_string(l) + ".";
    const std::size_t d = cfg_.d_model;
    const int heads = cfg_.n_heads;
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    // LN2
    Mat d_res2;
    layer_norm_backward(lc.res2, ckpt_.params.at(p + "ln2.g"), lc.ln2_mu,
                        lc.ln2_rstd, d_out, d_res2, grads.at(p + "ln2.g"),
                        grads.at(p + "ln2.b"));

    // FFN branch
    Mat d_ff2 = d_res2;
    if (lc.drop_ff.data.size() == d_ff2.data.size())
      kernels::hadamard(d_ff2.data.data(), d_ff2.data.data(),
                        lc.drop_ff.data.data(), d_ff2.data.size());
    Mat d_relu;
    {
      Tensor& dw2 = grads.at(p + "ff.w2");
      Mat dw2_m(cfg_.d_ff, d);
      dw2_m.data = dw2.grad;
      matmul_tn_acc(lc.relu_out, d_ff2, dw2_m);
      dw2.grad = dw2_m.data;
      Tensor& db2 = grads.at(p + "ff.b2");
      for (std::size_t i = 0; i < d_ff2.rows; ++i)
        kernels::add(db2.grad.data(), db2.grad.data(), d_ff2.row(i), d_ff2.cols);
      matmul_nt(d_ff2, as_mat(ckpt_.params.at(p + "ff.w2")), d_relu);
    }
    for (std::size_t i = 0; i < d_relu.data.size(); ++i)
      if (lc.ff1.data[i] <= 0.0) d_relu.data[i] = 0.0;
    Mat d_x_ln1;
    {
      Tensor& dw1 = grads.at(p + "ff.w1");
      Mat dw1_m(d, cfg_.d_ff);
      dw1_m.data = dw1.grad;
      matmul_tn_acc(lc.x_ln1, d_relu, dw1_m);
      dw1.grad = dw1_m.data;
      Tensor& db1 = grads.at(p + "ff.b1");
      for (std::size_t i = 0; i < d_relu.rows; ++i)
        kernels::add(db1.grad.data(), db1.grad.data(), d_relu.row(i), d_relu.cols);
      matmul_nt(d_relu, as_mat(ckpt_.params.at(p + "ff.w1")), d_x_ln1);
    }
    kernels::add(d_x_ln1.data.data(), d_x_ln1.data.data(), d_res2.data.data(),
                 d_x_ln1.data.size());

    // LN1
    Mat d_res1;
    layer_norm_backward(lc.res1, ckpt_.params.at(p + "ln1.g"), lc.ln1_mu,
                        lc.ln1_rstd, d_x_ln1, d_res1, grads.at(p + "ln1.g"),
                        grads.at(p + "ln1.b"));

    // Attention branch
    Mat d_attn = d_res1;
    if (lc.drop_attn.data.size() == d_attn.data.size())
      kernels::hadamard(d_attn.data.data(), d_attn.data.data(),
                        lc.drop_attn.data.data(), d_attn.data.size());
    Mat d_ctx;
    {
      Tensor& dwo = grads.at(p + "attn.wo");
      Mat dwo_m(d, d);
      dwo_m.data = dwo.grad;
      matmul_tn_acc(lc.ctx, d_attn, dwo_m);
      dwo.grad = dwo_m.data;
      Tensor& dbo = grads.at(p + "attn.bo");
      for (std::size_t i = 0; i < d_attn.rows; ++i)
        kernels::add(dbo.grad.data(), dbo.grad.data(), d_attn.row(i), d_attn.cols);
      matmul_nt(d_attn, as_mat(ckpt_.params.at(p + "attn.wo")), d_ctx);
    }

    Mat dq(lc.q.rows, d), dk(lc.k.rows, d), dv(lc.v.rows, d);
    for (int h = 0; h < heads; ++h) {
      const Mat qh = slice_cols(lc.q, h * dh, dh);
      const Mat kh = slice_cols(lc.k, h * dh, dh);
      const Mat vh = slice_cols(lc.v, h * dh, dh);
      const Mat d_ctx_h = slice_cols(d_ctx, h * dh, dh);
      const Mat& probs = lc.probs[h];

      Mat d_probs;
      matmul_nt(d_ctx_h, vh, d_probs);
      Mat dvh(vh.rows, dh);
      matmul_tn_acc(probs, d_ctx_h, dvh);

      Mat d_scores(probs.rows, probs.cols);
      for (std::size_t i = 0; i < probs.rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) dot += d_probs.at(i, j) * probs.at(i, j);
        for (std::size_t j = 0; j <= i; ++j)
          d_scores.at(i, j) = probs.at(i, j) * (d_probs.at(i, j) - dot);
      }
      for (auto& s : d_scores.data) s *= inv_sqrt;

      Mat dqh;
      matmul(d_scores, kh, dqh);
      Mat dkh(kh.rows, dh);
      matmul_tn_acc(d_scores, qh, dkh);

      scatter_cols_add(dq, dqh, h * dh);
      scatter_cols_add(dk, dkh, h * dh);
      scatter_cols_add(dv, dvh, h * dh);
    }

    Mat dx(lc.x_in.rows, d);
    auto proj_backward = [&](const Mat& d_proj, const char* w_name,
                             const char* b_name) {
      Tensor& dw = grads.at(p + w_name);
      Mat dw_m(d, d);
      dw_m.data = dw.grad;
      matmul_tn_acc(lc.x_in, d_proj, dw_m);
      dw.grad = dw_m.data;
      Tensor& db = grads.at(p + b_name);
      for (std::size_t i = 0; i < d_proj.rows; ++i)
        kernels::add(db.grad.data(), db.grad.data(), d_proj.row(i), d_proj.cols);
      Mat dx_part;
      matmul_nt(d_proj, as_mat(ckpt_.params.at(p + w_name)), dx_part);
      kernels::add(dx.data.data(), dx.data.data(), dx_part.data.data(),
                   dx.data.size());
    };
    proj_backward(dq, "attn.wq", "attn.bq");
    proj_backward(dk, "attn.wk", "attn.bk");
    proj_backward(dv, "attn.wv", "attn.bv");
    kernels::add(dx.data.data(), dx.data.data(), d_res1.data.data(), dx.data.size());
    return dx;
  }

  const ModelCheckpoint& ckpt_;
  const ModelConfig& cfg_;
};

ParamSet zero_like(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, t] : params.tensors) {
    Tensor z(t.shape);
    z.ensure_grad();
    out.tensors.emplace(name, std::move(z));
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model % n_heads != 0)
    throw std::invalid_argument("d_model must be divisible by n_heads");
  if (input_dim < 1 || state_dim < 1)
    throw std::invalid_argument("input_dim/state_dim must be set");
  if (max_seq_len < 2) throw std::invalid_argument("max_seq_len too small");
}

NormStats compute_norm_stats(const Dataset& train, int state_dim) {
  NormStats ns;
  ns.beta_mean.assign(state_dim, 0.0);
  ns.beta_std.assign(state_dim, 1.0);
  Vec beta_sq(state_dim, 0.0);
  double alpha_sum = 0.0, alpha_sq = 0.0;
  std::size_t count = 0;
  for (const auto& ex : train.examples) {
    for (const auto& el : ex.sequence) {
      for (int d = 0; d < state_dim; ++d) {
        ns.beta_mean[d] += el.beta[d];
        beta_sq[d] += el.beta[d] * el.beta[d];
      }
      alpha_sum += el.alpha;
      alpha_sq += el.alpha * el.alpha;
      ++count;
    }
  }
  if (count == 0) return ns;
  for (int d = 0; d < state_dim; ++d) {
    ns.beta_mean[d] /= count;
    const double var = beta_sq[d] / count - ns.beta_mean[d] * ns.beta_mean[d];
    ns.beta_std[d] = std::sqrt(std::max(var, 0.0));
    if (ns.beta_std[d] < kStdFloor) ns.beta_std[d] = 1.0;
  }
  ns.alpha_mean = alpha_sum / count;
  const double avar = alpha_sq / count - ns.alpha_mean * ns.alpha_mean;
  ns.alpha_std = std::sqrt(std::max(avar, 0.0));
  if (ns.alpha_std < kStdFloor) ns.alpha_std = 1.0;
  return ns;
}

ModelCheckpoint init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelCheckpoint ckpt;
  ckpt.config = config;
  ckpt.norm.beta_mean.assign(config.state_dim, 0.0);
  ckpt.norm.beta_std.assign(config.state_dim, 1.0);
  ckpt.meta.seed = seed;

  const std::size_t d = config.d_model;
  auto& ps = ckpt.params;
  ps.emplace("cond.w", {static_cast<std::size_t>(config.input_dim), d});
  ps.emplace("cond.b", {d});
  ps.emplace("emb.w", {static_cast<std::size_t>(config.token_dim()), d});
  ps.emplace("emb.b", {d});
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* name : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      ps.emplace(p + name, {d, d});
    for (const char* name : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      ps.emplace(p + name, {d});
    ps.emplace(p + "ln1.g", {d});
    ps.emplace(p + "ln1.b", {d});
    ps.emplace(p + "ln2.g", {d});
    ps.emplace(p + "ln2.b", {d});
    ps.emplace(p + "ff.w1", {d, static_cast<std::size_t>(config.d_ff)});
    ps.emplace(p + "ff.b1", {static_cast<std::size_t>(config.d_ff)});
    ps.emplace(p + "ff.w2", {static_cast<std::size_t>(config.d_ff), d});
    ps.emplace(p + "ff.b2", {d});
  }
  ps.emplace("head.w", {d, static_cast<std::size_t>(config.out_dim())});
  ps.emplace("head.b", {static_cast<std::size_t>(config.out_dim())});

  Rng rng(seed);
  for (auto& [name, t] : ps.tensors) {
    if (name.find("ln") != std::string::npos) {
      if (name.back() == 'g') std::fill(t.values.begin(), t.values.end(), 1.0);
      continue;  // biases stay zero
    }
    if (t.shape.size() == 2) {
      const double bound = std::sqrt(6.0 / (t.shape[0] + t.shape[1]));
      for (auto& v : t.values) v = rng.uniform(-bound, bound);
    }
  }

  for (const auto& [name, t] : ps.tensors) {
    ckpt.adam_m.emplace(name, t.shape);
    ckpt.adam_v.emplace(name, t.shape);
  }
  return ckpt;
}

std::vector<PredictedElement> model_forward(const ModelCheckpoint& ckpt,
                                            const Vec& conditioning,
                                            std::span<const SequenceElement> prefix) {
  Decoder dec(ckpt);
  ForwardCache fc;
  dec.forward(conditioning, prefix, fc, nullptr);

  std::vector<PredictedElement> out;
  const int sd = ckpt.config.state_dim;
  for (std::size_t row = 1; row < fc.head_out.rows; ++row) {
    PredictedElement el;
    el.beta.resize(sd);
    for (int d = 0; d < sd; ++d)
      el.beta[d] = fc.head_out.at(row, d) * std::max(ckpt.norm.beta_std[d], kStdFloor) +
                   ckpt.norm.beta_mean[d];
    el.alpha = fc.head_out.at(row, sd) * std::max(ckpt.norm.alpha_std, kStdFloor) +
               ckpt.norm.alpha_mean;
    double logits[4];
    for (int c = 0; c < 4; ++c) logits[c] = fc.head_out.at(row, sd + 1 + c);
    softmax_row(logits, 4);
    for (int c = 0; c < 4; ++c) el.tau_probs[c] = logits[c];
    out.push_back(std::move(el));
  }
  return out;
}

double sequence_loss(std::span<const PredictedElement> pred,
                     std::span<const SequenceElement> target_from_k2) {
  if (pred.size() != target_from_k2.size())
    throw std::invalid_argument("sequence_loss: length mismatch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const auto& t = target_from_k2[k];
    if (t.token == SeqToken::Pad) continue;
    const auto& p = pred[k];
    for (std::size_t d = 0; d < p.beta.size(); ++d) {
      const double e = p.beta[d] - t.beta[d];
      total += e * e;
    }
    const double ea = p.alpha - t.alpha;
    total += ea * ea;
    const double prob = std::max(p.tau_probs[static_cast<int>(t.token)], 1e-300);
    total += -std::log(prob);
    ++count;
  }
  return count == 0 ? 0.0 : total / count;
}

double model_loss_and_grad(const ModelCheckpoint& ckpt,
                           std::span<const CutSequenceExample> batch,
                           ParamSet* grads, Rng* dropout_rng) {
  Decoder dec(ckpt);
  const int sd = ckpt.config.state_dim;
  const NormStats& ns = ckpt.norm;

  std::size_t total_positions = 0;
  for (const auto& ex : batch)
    for (std::size_t k = 1; k < ex.sequence.size(); ++k)
      if (ex.sequence[k].token != SeqToken::Pad) ++total_positions;
  if (total_positions == 0) return 0.0;
  const double inv_count = 1.0 / static_cast<double>(total_positions);

  double loss = 0.0;
  for (const auto& ex : batch) {
    if (ex.sequence.size() < 2) continue;
    const Vec cond = ex.conditioning();
    const std::span<const SequenceElement> prefix(ex.sequence.data(),
                                                  ex.sequence.size() - 1);
    ForwardCache fc;
    dec.forward(cond, prefix, fc, dropout_rng);

    Mat d_out(fc.head_out.rows, fc.head_out.cols);
    for (std::size_t row = 1; row < fc.head_out.rows; ++row) {
      const SequenceElement& target = ex.sequence[row];
      if (target.token == SeqToken::Pad) continue;
      // Regression in standardized coordinates.
      for (int d = 0; d < sd; ++d) {
        const double tstd = (target.beta[d] - ns.beta_mean[d]) /
                            std::max(ns.beta_std[d], kStdFloor);
        const double e = fc.head_out.at(row, d) - tstd;
        loss += e * e * inv_count;
        d_out.at(row, d) = 2.0 * e * inv_count;
      }
      {
        const double tstd =
            (target.alpha - ns.alpha_mean) / std::max(ns.alpha_std, kStdFloor);
        const double e = fc.head_out.at(row, sd) - tstd;
        loss += e * e * inv_count;
        d_out.at(row, sd) = 2.0 * e * inv_count;
      }
      double probs[4];
      for (int c = 0; c < 4; ++c) probs[c] = fc.head_out.at(row, sd + 1 + c);
      softmax_row(probs, 4);
      const int target_class = static_cast<int>(target.token);
      loss += -std::log(std::max(probs[target_class], 1e-300)) * inv_count;
      for (int c = 0; c < 4; ++c) {
        const double onehot = c == target_class ? 1.0 : 0.0;
        d_out.at(row, sd + 1 + c) = (probs[c] - onehot) * inv_count;
      }
    }
    if (grads) dec.backward(fc, d_out, *grads);
  }
  return loss;
}

void adam_step(ModelCheckpoint& ckpt, const ParamSet& grads, double lr) {
  if (ckpt.gamma1 >= 1.0 || ckpt.gamma2 >= 1.0)
    throw std::invalid_argument("adam: gamma must be < 1");
  ++ckpt.adam_step;
  const double bc1 = 1.0 - ckpt.gamma1;
  const double bc2 = 1.0 - ckpt.gamma2;
  for (auto& [name, w] : ckpt.params.tensors) {
    const Tensor& g = grads.at(name);
    Tensor& m = ckpt.adam_m.at(name);
    Tensor& v = ckpt.adam_v.at(name);
    for (std::size_t i = 0; i < w.values.size(); ++i) {
      const double gi = g.grad[i];
      m.values[i] = ckpt.gamma1 * m.values[i] + (1.0 - ckpt.gamma1) * gi;
      v.values[i] = ckpt.gamma2 * v.values[i] + (1.0 - ckpt.gamma2) * gi * gi;
      const double m_hat = m.values[i] / bc1;
      const double v_hat = v.values[i] / bc2;
      w.values[i] -= lr * m_hat / (std::sqrt(v_hat) + ckpt.adam_delta);
    }
  }
}

TrainResult train_model(const Dataset& train, const Dataset& val,
                        ModelConfig config, const TrainOptions& opts) {
  if (train.examples.empty()) throw std::invalid_argument("empty training set");
  const FamilyId family = train.examples.front().family;
  for (const auto& ex : train.examples)
    if (ex.family != family)
      throw std::invalid_argument("training examples must share one family");

  const int state_dim = family_state_dim(family);
  config.state_dim = state_dim;
  config.input_dim =
      static_cast<int>(train.examples.front().lambda.size()) + 1;
  for (const Dataset* part : {&train, &val})
    for (const auto& ex : part->examples)
      config.max_seq_len =
          std::max(config.max_seq_len, static_cast<int>(ex.sequence.size()) + 1);

  ModelCheckpoint ckpt = init_model(config, opts.seed);
  ckpt.gamma1 = opts.gamma1;
  ckpt.gamma2 = opts.gamma2;
  ckpt.adam_delta = opts.adam_delta;
  ckpt.norm = compute_norm_stats(train, state_dim);
  ckpt.meta.family = family_name(family);
  ckpt.meta.stages = train.meta.T;

  Rng rng(opts.seed);
  Rng shuffle_rng = rng.derive(1);
  Rng dropout_rng = rng.derive(2);

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  ModelCheckpoint best = ckpt;

  std::vector<std::size_t> order(train.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double train_loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<CutSequenceExample> batch;
    for (std::size_t start = 0; start < order.size();
         start += opts.batch_size) {
      batch.clear();
      for (std::size_t i = start;
           i < std::min(order.size(), start + opts.batch_size); ++i)
        batch.push_back(train.examples[order[i]]);
      ParamSet grads = zero_like(ckpt.params);
      double loss = 0.0;
      try {
        loss = model_loss_and_grad(
            ckpt, batch, &grads,
            config.dropout_rate > 0.0 ? &dropout_rng : nullptr);
      } catch (const std::runtime_error& e) {
        throw TrainingDiverged(std::string("training diverged at epoch ") +
                               std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss))
        throw TrainingDiverged("training loss became non-finite at epoch " +
                               std::to_string(epoch));
      adam_step(ckpt, grads, opts.lr);
      train_loss_sum += loss;
      ++batches;
    }
    const double train_loss = train_loss_sum / std::max<std::size_t>(1, batches);

    const double val_loss =
        val.examples.empty()
            ? train_loss
            : model_loss_and_grad(ckpt, val.examples, nullptr, nullptr);
    if (!std::isfinite(val_loss))
      throw TrainingDiverged("validation loss became non-finite");

    result.train_losses.push_back(train_loss);
    result.val_losses.push_back(val_loss);
    if (opts.verbose)
      std::fprintf(stderr, "epoch %d train %.6f val %.6f\n", epoch, train_loss,
                   val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      best = ckpt;
    }
  }

  best.meta.epochs = opts.epochs;
  best.meta.seed = opts.seed;
  best.meta.train_loss = result.train_losses;
  best.meta.val_loss = result.val_losses;
  best.meta.best_val_loss = best_val;
  result.checkpoint = std::move(best);
  return result;
}

GenerationResult generate_cuts(const ModelCheckpoint& ckpt, const Vec& conditioning,
                               const Cut& trivial, int max_len, int stage) {
  if (max_len > ckpt.config.max_seq_len)
    throw std::invalid_argument("max_len exceeds the model's max_seq_len");
  GenerationResult out;
  out.cutset = CutSet(stage, trivial);

  std::vector<SequenceElement> seq{
      SequenceElement{trivial.beta, trivial.alpha, SeqToken::Start}};
  out.malformed = true;
  while (static_cast<int>(seq.size()) < max_len) {
    const auto preds = model_forward(ckpt, conditioning, seq);
    const PredictedElement& last = preds.back();
    int tau = 0;
    for (int c = 1; c < 4; ++c)
      if (last.tau_probs[c] > last.tau_probs[tau]) tau = c;
    if (static_cast<SeqToken>(tau) == SeqToken::End) {
      out.malformed = false;
      break;
    }
    bool finite = std::isfinite(last.alpha);
    for (double b : last.beta) finite = finite && std::isfinite(b);
    if (!finite) break;  // stays malformed
    seq.push_back(SequenceElement{last.beta, last.alpha, static_cast<SeqToken>(tau)});
    out.cutset.add(Cut{last.beta, last.alpha, CutOrigin::Generated});
    ++out.generated;
  }
  return out;
}

namespace {

nlohmann::json paramset_to_json(const ParamSet& ps) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : ps.tensors)
    j[name] = {{"shape", t.shape}, {"data", t.values}};
  return j;
}

ParamSet paramset_from_json(const nlohmann::json& j) {
  ParamSet ps;
  for (auto it = j.begin(); it != j.end(); ++it) {
    Tensor t(it.value().at("shape").get<std::vector<std::size_t>>());
    t.values = it.value().at("data").get<Vec>();
    if (t.values.size() != t.numel())
      throw std::runtime_error("tensor size mismatch for " + it.key());
    ps.tensors.emplace(it.key(), std::move(t));
  }
  return ps;
}

}  // namespace

std::string checkpoint_to_json(const ModelCheckpoint& ckpt) {
  nlohmann::json j;
  j["version"] = ckpt.version;
  j["config"] = {{"d_model", ckpt.config.d_model},
                 {"n_heads", ckpt.config.n_heads},
                 {"n_layers", ckpt.config.n_layers},
                 {"d_ff", ckpt.config.d_ff},
                 {"max_seq_len", ckpt.config.max_seq_len},
                 {"input_dim", ckpt.config.input_dim},
                 {"state_dim", ckpt.config.state_dim},
                 {"dropout_rate", ckpt.config.dropout_rate}};
  j["adam"] = {{"step", ckpt.adam_step},
               {"gamma1", ckpt.gamma1},
               {"gamma2", ckpt.gamma2},
               {"delta", ckpt.adam_delta},
               {"m", paramset_to_json(ckpt.adam_m)},
               {"v", paramset_to_json(ckpt.adam_v)}};
  j["params"] = paramset_to_json(ckpt.params);
  j["norm"] = {{"beta_mean", ckpt.norm.beta_mean},
               {"beta_std", ckpt.norm.beta_std},
               {"alpha_mean", ckpt.norm.alpha_mean},
               {"alpha_std", ckpt.norm.alpha_std}};
  j["meta"] = {{"epochs", ckpt.meta.epochs},
               {"seed", ckpt.meta.seed},
               {"train_loss", ckpt.meta.train_loss},
               {"val_loss", ckpt.meta.val_loss},
               {"best_val_loss", ckpt.meta.best_val_loss},
               {"family", ckpt.meta.family},
               {"stages", ckpt.meta.stages}};
  return j.dump();
}

ModelCheckpoint checkpoint_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ModelCheckpoint ckpt;
  ckpt.version = j.at("version").get<int>();
  const auto& c = j.at("config");
  ckpt.config.d_model = c.at("d_model").get<int>();
  ckpt.config.n_heads = c.at("n_heads").get<int>();
  ckpt.config.n_layers = c.at("n_layers").get<int>();
  ckpt.config.d_ff = c.at("d_ff").get<int>();
  ckpt.config.max_seq_len = c.at("max_seq_len").get<int>();
  ckpt.config.input_dim = c.at("input_dim").get<int>();
  ckpt.config.state_dim = c.at("state_dim").get<int>();
  ckpt.config.dropout_rate = c.at("dropout_rate").get<double>();
  const auto& a = j.at("adam");
  ckpt.adam_step = a.at("step").get<long>();
  ckpt.gamma1 = a.at("gamma1").get<double>();
  ckpt.gamma2 = a.at("gamma2").get<double>();
  ckpt.adam_delta = a.at("delta").get<double>();
  ckpt.adam_m = paramset_from_json(a.at("m"));
  ckpt.adam_v = paramset_from_json(a.at("v"));
  ckpt.params = paramset_from_json(j.at("params"));
  const auto& n = j.at("norm");
  ckpt.norm.beta_mean = n.at("beta_mean").get<Vec>();
  ckpt.norm.beta_std = n.at("beta_std").get<Vec>();
  ckpt.norm.alpha_mean = n.at("alpha_mean").get<double>();
  ckpt.norm.alpha_std = n.at("alpha_std").get<double>();
  const auto& m = j.at("meta");
  ckpt.meta.epochs = m.at("epochs").get<int>();
  ckpt.meta.seed = m.at("seed").get<std::uint64_t>();
  ckpt.meta.train_loss = m.at("train_loss").get<std::vector<double>>();
  ckpt.meta.val_loss = m.at("val_loss").get<std::vector<double>>();
  ckpt.meta.best_val_loss = m.at("best_val_loss").get<double>();
  ckpt.meta.family = m.at("family").get<std::string>();
  ckpt.meta.stages = m.at("stages").get<int>();
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    os << checkpoint_to_json(ckpt);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return checkpoint_from_json(buf.str());
}

}  // namespace msopt
