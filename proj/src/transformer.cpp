#include "giftlab/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace giftlab::model {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

double gelu(double x) {
  const double u = kGeluC * (x + kGeluK * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + kGeluK * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * x * x);
}

// y[t] = x[t] * W + b with W stored row-major [in, out].
void linear_forward(const Grid& x, const double* w, const double* b, Grid& y) {
  const int in = x.cols();
  const int out = y.cols();
  for (int t = 0; t < x.rows(); ++t) {
    const double* xt = x.row(t);
    double* yt = y.row(t);
    for (int o = 0; o < out; ++o) yt[o] = b[o];
    for (int i = 0; i < in; ++i) {
      const double xi = xt[i];
      if (xi == 0.0) continue;
      const double* wrow = w + static_cast<std::size_t>(i) * out;
      for (int o = 0; o < out; ++o) yt[o] += xi * wrow[o];
    }
  }
}

// Accumulates dx, dW, db for y = x * W + b.
void linear_backward(const Grid& x, const double* w, const Grid& dy, Grid& dx, double* dw,
                     double* db) {
  const int in = x.cols();
  const int out = dy.cols();
  for (int t = 0; t < x.rows(); ++t) {
    const double* xt = x.row(t);
    const double* dyt = dy.row(t);
    double* dxt = dx.row(t);
    for (int o = 0; o < out; ++o) db[o] += dyt[o];
    for (int i = 0; i < in; ++i) {
      const double* wrow = w + static_cast<std::size_t>(i) * out;
      double* dwrow = dw + static_cast<std::size_t>(i) * out;
      double acc = 0.0;
      const double xi = xt[i];
      for (int o = 0; o < out; ++o) {
        acc += dyt[o] * wrow[o];
        dwrow[o] += xi * dyt[o];
      }
      dxt[i] += acc;
    }
  }
}

void layernorm_forward(const Grid& x, const double* g, const double* b, Grid& y,
                       std::vector<double>& mean, std::vector<double>& rstd) {
  const int d = x.cols();
  mean.resize(x.rows());
  rstd.resize(x.rows());
  for (int t = 0; t < x.rows(); ++t) {
    const double* xt = x.row(t);
    double m = 0.0;
    for (int i = 0; i < d; ++i) m += xt[i];
    m /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      const double c = xt[i] - m;
      var += c * c;
    }
    var /= d;
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    mean[t] = m;
    rstd[t] = rs;
    double* yt = y.row(t);
    for (int i = 0; i < d; ++i) yt[i] = (xt[i] - m) * rs * g[i] + b[i];
  }
}

// Accumulates dx, dg, db given upstream dy.
void layernorm_backward(const Grid& x, const double* g, const std::vector<double>& mean,
                        const std::vector<double>& rstd, const Grid& dy, Grid& dx, double* dg,
                        double* db) {
  const int d = x.cols();
  for (int t = 0; t < x.rows(); ++t) {
    const double* xt = x.row(t);
    const double* dyt = dy.row(t);
    double* dxt = dx.row(t);
    const double m = mean[t];
    const double rs = rstd[t];

    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (int i = 0; i < d; ++i) {
      const double xhat = (xt[i] - m) * rs;
      const double dxhat = dyt[i] * g[i];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      dg[i] += dyt[i] * xhat;
      db[i] += dyt[i];
    }
    const double inv_d = 1.0 / d;
    for (int i = 0; i < d; ++i) {
      const double xhat = (xt[i] - m) * rs;
      const double dxhat = dyt[i] * g[i];
      dxt[i] += rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
    }
  }
}

}  // namespace

MicroTransformer::MicroTransformer(Vocabulary vocab, TransformerArch arch, std::uint64_t init_seed)
    : vocab_(vocab), arch_(arch), init_seed_(init_seed), ffn_width_(4 * arch.width) {
  if (arch_.width < 2 || arch_.heads < 1 || arch_.layers < 1 || arch_.context < 1) {
    throw std::invalid_argument("MicroTransformer: bad architecture");
  }
  if (arch_.width % arch_.heads != 0) {
    throw std::invalid_argument("MicroTransformer: width must be divisible by heads");
  }

  const int d = arch_.width;
  const int f = ffn_width_;
  const int v = vocab_.size;
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };

  off_wte_ = take(static_cast<std::size_t>(v) * d);
  off_wpe_ = take(static_cast<std::size_t>(arch_.context) * d);
  layer_off_.resize(arch_.layers);
  for (auto& lo : layer_off_) {
    lo.ln1_g = take(d);
    lo.ln1_b = take(d);
    lo.wq = take(static_cast<std::size_t>(d) * d);
    lo.bq = take(d);
    lo.wk = take(static_cast<std::size_t>(d) * d);
    lo.bk = take(d);
    lo.wv = take(static_cast<std::size_t>(d) * d);
    lo.bv = take(d);
    lo.wo = take(static_cast<std::size_t>(d) * d);
    lo.bo = take(d);
    lo.ln2_g = take(d);
    lo.ln2_b = take(d);
    lo.w_fc = take(static_cast<std::size_t>(d) * f);
    lo.b_fc = take(f);
    lo.w_proj = take(static_cast<std::size_t>(f) * d);
    lo.b_proj = take(d);
  }
  off_lnf_g_ = take(d);
  off_lnf_b_ = take(d);
  off_w_head_ = take(static_cast<std::size_t>(d) * v);
  off_b_head_ = take(v);

  params_.assign(off, 0.0);
  init_params(init_seed);
}

void MicroTransformer::init_params(std::uint64_t seed) {
  Rng rng(seed);
  const double std_base = 0.02;
  // Residual-branch projections are shrunk with depth to keep the stream
  // near unit scale at initialization.
  const double std_resid = std_base / std::sqrt(2.0 * arch_.layers);

  auto fill_normal = [&rng](double* p, std::size_t n, double std) {
    for (std::size_t i = 0; i < n; ++i) p[i] = std * rng.normal();
  };
  auto fill_const = [](double* p, std::size_t n, double c) {
    for (std::size_t i = 0; i < n; ++i) p[i] = c;
  };

  const int d = arch_.width;
  const int f = ffn_width_;
  const int v = vocab_.size;
  double* p = params_.data();

  fill_normal(p + off_wte_, static_cast<std::size_t>(v) * d, std_base);
  fill_normal(p + off_wpe_, static_cast<std::size_t>(arch_.context) * d, std_base);
  for (const auto& lo : layer_off_) {
    fill_const(p + lo.ln1_g, d, 1.0);
    fill_normal(p + lo.wq, static_cast<std::size_t>(d) * d, std_base);
    fill_normal(p + lo.wk, static_cast<std::size_t>(d) * d, std_base);
    fill_normal(p + lo.wv, static_cast<std::size_t>(d) * d, std_base);
    fill_normal(p + lo.wo, static_cast<std::size_t>(d) * d, std_resid);
    fill_const(p + lo.ln2_g, d, 1.0);
    fill_normal(p + lo.w_fc, static_cast<std::size_t>(d) * f, std_base);
    fill_normal(p + lo.w_proj, static_cast<std::size_t>(f) * d, std_resid);
  }
  fill_const(p + off_lnf_g_, d, 1.0);
  fill_normal(p + off_w_head_, static_cast<std::size_t>(d) * v, std_base);
}

void MicroTransformer::run_forward(std::span<const int> tokens, Cache& cache) const {
  check_tokens(tokens);
  const int T = static_cast<int>(tokens.size());
  if (T == 0) throw std::domain_error("MicroTransformer: empty input");
  const int D = arch_.width;
  const int H = arch_.heads;
  const int hd = D / H;
  const int F = ffn_width_;
  const int V = vocab_.size;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* p = params_.data();

  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.layers.assign(arch_.layers, LayerCache{});

  Grid x(T, D);
  for (int t = 0; t < T; ++t) {
    const double* te = p + off_wte_ + static_cast<std::size_t>(tokens[t]) * D;
    const double* pe = p + off_wpe_ + static_cast<std::size_t>(t) * D;
    double* xt = x.row(t);
    for (int i = 0; i < D; ++i) xt[i] = te[i] + pe[i];
  }

  for (int l = 0; l < arch_.layers; ++l) {
    const auto& lo = layer_off_[l];
    LayerCache& lc = cache.layers[l];
    lc.x_in = x;

    lc.a = Grid(T, D);
    layernorm_forward(lc.x_in, p + lo.ln1_g, p + lo.ln1_b, lc.a, lc.ln1_mean, lc.ln1_rstd);

    lc.q = Grid(T, D);
    lc.k = Grid(T, D);
    lc.v = Grid(T, D);
    linear_forward(lc.a, p + lo.wq, p + lo.bq, lc.q);
    linear_forward(lc.a, p + lo.wk, p + lo.bk, lc.k);
    linear_forward(lc.a, p + lo.wv, p + lo.bv, lc.v);

    lc.probs.assign(H, Grid(T, T));
    lc.ctx = Grid(T, D);
    std::vector<double> scores(T);
    for (int h = 0; h < H; ++h) {
      const int base = h * hd;
      Grid& prob = lc.probs[h];
      for (int t = 0; t < T; ++t) {
        const double* qt = lc.q.row(t) + base;
        double maxs = -1e300;
        for (int s = 0; s <= t; ++s) {
          const double* ks = lc.k.row(s) + base;
          double dot = 0.0;
          for (int j = 0; j < hd; ++j) dot += qt[j] * ks[j];
          scores[s] = dot * scale;
          if (scores[s] > maxs) maxs = scores[s];
        }
        double denom = 0.0;
        for (int s = 0; s <= t; ++s) {
          scores[s] = std::exp(scores[s] - maxs);
          denom += scores[s];
        }
        double* pt = prob.row(t);
        for (int s = 0; s <= t; ++s) pt[s] = scores[s] / denom;

        double* ct = lc.ctx.row(t) + base;
        for (int j = 0; j < hd; ++j) ct[j] = 0.0;
        for (int s = 0; s <= t; ++s) {
          const double w = pt[s];
          const double* vs = lc.v.row(s) + base;
          for (int j = 0; j < hd; ++j) ct[j] += w * vs[j];
        }
      }
    }

    lc.x_mid = Grid(T, D);
    linear_forward(lc.ctx, p + lo.wo, p + lo.bo, lc.x_mid);
    for (int t = 0; t < T; ++t) {
      double* mt = lc.x_mid.row(t);
      const double* xt = lc.x_in.row(t);
      for (int i = 0; i < D; ++i) mt[i] += xt[i];
    }

    lc.b = Grid(T, D);
    layernorm_forward(lc.x_mid, p + lo.ln2_g, p + lo.ln2_b, lc.b, lc.ln2_mean, lc.ln2_rstd);
    lc.fc = Grid(T, F);
    linear_forward(lc.b, p + lo.w_fc, p + lo.b_fc, lc.fc);
    lc.gelu = Grid(T, F);
    for (int t = 0; t < T; ++t) {
      const double* ft = lc.fc.row(t);
      double* gt = lc.gelu.row(t);
      for (int i = 0; i < F; ++i) gt[i] = gelu(ft[i]);
    }
    x = Grid(T, D);
    linear_forward(lc.gelu, p + lo.w_proj, p + lo.b_proj, x);
    for (int t = 0; t < T; ++t) {
      double* xt = x.row(t);
      const double* mt = lc.x_mid.row(t);
      for (int i = 0; i < D; ++i) xt[i] += mt[i];
    }
  }

  cache.h_final = x;
  cache.hn = Grid(T, D);
  layernorm_forward(cache.h_final, p + off_lnf_g_, p + off_lnf_b_, cache.hn, cache.lnf_mean,
                    cache.lnf_rstd);
  cache.logits = Grid(T, V);
  linear_forward(cache.hn, p + off_w_head_, p + off_b_head_, cache.logits);
}

Grid MicroTransformer::forward(std::span<const int> tokens) const {
  Cache local;
  run_forward(tokens, local);
  return std::move(local.logits);
}

std::vector<double> MicroTransformer::next_logits(std::span<const int> context) const {
  if (context.empty()) throw std::domain_error("MicroTransformer::next_logits: empty context");
  const Grid logits = forward(context);
  const int last = logits.rows() - 1;
  return std::vector<double>(logits.row(last), logits.row(last) + logits.cols());
}

Grid MicroTransformer::hidden_states(std::span<const int> tokens) const {
  Cache local;
  run_forward(tokens, local);
  return std::move(local.h_final);
}

const Grid& MicroTransformer::forward_train(std::span<const int> tokens) {
  run_forward(tokens, cache_);
  has_cache_ = true;
  return cache_.logits;
}

void MicroTransformer::backward(const Grid& dlogits, std::span<double> grad_out) {
  if (!has_cache_) throw std::logic_error("MicroTransformer::backward without forward_train");
  const int T = static_cast<int>(cache_.tokens.size());
  const int D = arch_.width;
  const int H = arch_.heads;
  const int hd = D / H;
  const int F = ffn_width_;
  const int V = vocab_.size;
  if (dlogits.rows() != T || dlogits.cols() != V) {
    throw std::domain_error("MicroTransformer::backward: gradient shape mismatch");
  }
  if (grad_out.size() != params_.size()) {
    throw std::domain_error("MicroTransformer::backward: grad_out size mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* p = params_.data();
  double* g = grad_out.data();

  // Head and final norm.
  Grid d_hn(T, D);
  linear_backward(cache_.hn, p + off_w_head_, dlogits, d_hn, g + off_w_head_, g + off_b_head_);
  Grid d_h(T, D);
  layernorm_backward(cache_.h_final, p + off_lnf_g_, cache_.lnf_mean, cache_.lnf_rstd, d_hn, d_h,
                     g + off_lnf_g_, g + off_lnf_b_);

  for (int l = arch_.layers - 1; l >= 0; --l) {
    const auto& lo = layer_off_[l];
    LayerCache& lc = cache_.layers[l];

    // x_out = x_mid + proj(gelu(fc(ln2(x_mid)))): d_h is d(x_out).
    Grid d_gelu(T, F);
    linear_backward(lc.gelu, p + lo.w_proj, d_h, d_gelu, g + lo.w_proj, g + lo.b_proj);
    Grid d_fc(T, F);
    for (int t = 0; t < T; ++t) {
      const double* ft = lc.fc.row(t);
      const double* dgt = d_gelu.row(t);
      double* dft = d_fc.row(t);
      for (int i = 0; i < F; ++i) dft[i] = dgt[i] * gelu_grad(ft[i]);
    }
    Grid d_b(T, D);
    linear_backward(lc.b, p + lo.w_fc, d_fc, d_b, g + lo.w_fc, g + lo.b_fc);
    Grid d_x_mid = d_h;  // residual path
    layernorm_backward(lc.x_mid, p + lo.ln2_g, lc.ln2_mean, lc.ln2_rstd, d_b, d_x_mid, g + lo.ln2_g,
                       g + lo.ln2_b);

    // x_mid = x_in + wo(ctx) + bo: d_x_mid feeds both paths.
    Grid d_ctx(T, D);
    linear_backward(lc.ctx, p + lo.wo, d_x_mid, d_ctx, g + lo.wo, g + lo.bo);

    Grid d_q(T, D), d_k(T, D), d_v(T, D);
    std::vector<double> dp(T), ds(T);
    for (int h = 0; h < H; ++h) {
      const int base = h * hd;
      const Grid& prob = lc.probs[h];
      for (int t = 0; t < T; ++t) {
        const double* dct = d_ctx.row(t) + base;
        const double* pt = prob.row(t);
        // dv and dp
        for (int s = 0; s <= t; ++s) {
          const double* vs = lc.v.row(s) + base;
          double* dvs = d_v.row(s) + base;
          double dot = 0.0;
          for (int j = 0; j < hd; ++j) {
            dvs[j] += pt[s] * dct[j];
            dot += dct[j] * vs[j];
          }
          dp[s] = dot;
        }
        // softmax backward
        double inner = 0.0;
        for (int s = 0; s <= t; ++s) inner += dp[s] * pt[s];
        for (int s = 0; s <= t; ++s) ds[s] = pt[s] * (dp[s] - inner);
        // scores[t][s] = scale * q_t . k_s
        double* dqt = d_q.row(t) + base;
        for (int s = 0; s <= t; ++s) {
          const double w = ds[s] * scale;
          const double* ks = lc.k.row(s) + base;
          const double* qt = lc.q.row(t) + base;
          double* dks = d_k.row(s) + base;
          for (int j = 0; j < hd; ++j) {
            dqt[j] += w * ks[j];
            dks[j] += w * qt[j];
          }
        }
      }
    }

    Grid d_a(T, D);
    linear_backward(lc.a, p + lo.wq, d_q, d_a, g + lo.wq, g + lo.bq);
    linear_backward(lc.a, p + lo.wk, d_k, d_a, g + lo.wk, g + lo.bk);
    linear_backward(lc.a, p + lo.wv, d_v, d_a, g + lo.wv, g + lo.bv);

    Grid d_x_in = d_x_mid;  // residual path
    layernorm_backward(lc.x_in, p + lo.ln1_g, lc.ln1_mean, lc.ln1_rstd, d_a, d_x_in, g + lo.ln1_g,
                       g + lo.ln1_b);
    d_h = std::move(d_x_in);
  }

  for (int t = 0; t < T; ++t) {
    const double* dt = d_h.row(t);
    double* dte = g + off_wte_ + static_cast<std::size_t>(cache_.tokens[t]) * D;
    double* dpe = g + off_wpe_ + static_cast<std::size_t>(t) * D;
    for (int i = 0; i < D; ++i) {
      dte[i] += dt[i];
      dpe[i] += dt[i];
    }
  }
}

std::unique_ptr<PolicyModel> MicroTransformer::clone() const {
  return std::make_unique<MicroTransformer>(*this);
}

}  // namespace giftlab::model
