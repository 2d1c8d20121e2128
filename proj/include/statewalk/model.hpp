#pragma once
// Qwen2-style causal decoder, scalar-templated so the same code runs float
// training and double gradient checks.  Sequences are packed: a batch is one
// token stream split into spans; a span attends to itself causally and,
// optionally, to a parent span (shared prompt).  That single abstraction
// serves padded-free pretraining batches and grouped RL rollouts alike.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "statewalk/errors.hpp"
#include "statewalk/rng.hpp"

namespace statewalk {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int vocab_size = 29;
  int d_model = 128;
  int d_ff = 512;
  int n_layers = 4;
  int n_heads = 2;
  int n_kv_heads = 2;
  int head_dim = 64;
  double rope_theta = 10000.0;
  double rms_eps = 1e-6;
  double init_std = 0.02;
  bool tie_embeddings = false;
  double attention_dropout = 0.0;
  int max_positions = 256;

  void validate() const {
    if (vocab_size < 1 || d_model < 1 || d_ff < 1 || n_layers < 1) throw InvalidConfig("non-positive model dims");
    if (n_heads < 1 || n_kv_heads < 1) throw InvalidConfig("non-positive head counts");
    if (head_dim * n_heads != d_model) throw InvalidConfig("head_dim * n_heads must equal d_model");
    if (n_heads % n_kv_heads != 0) throw InvalidConfig("n_heads must be divisible by n_kv_heads");
    if (head_dim % 2 != 0) throw InvalidConfig("head_dim must be even for rotary pairing");
    if (tie_embeddings) throw InvalidConfig("tied embeddings are out of scope");
    if (attention_dropout != 0.0) throw InvalidConfig("attention dropout is fixed at 0");
    if (max_positions < 1) throw InvalidConfig("max_positions must be positive");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"vocab_size", vocab_size}, {"d_model", d_model},     {"d_ff", d_ff},
                          {"n_layers", n_layers},     {"n_heads", n_heads},     {"n_kv_heads", n_kv_heads},
                          {"head_dim", head_dim},     {"rope_theta", rope_theta}, {"rms_eps", rms_eps},
                          {"init_std", init_std},     {"tie_embeddings", tie_embeddings},
                          {"attention_dropout", attention_dropout}, {"max_positions", max_positions}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_kv_heads = j.value("n_kv_heads", c.n_kv_heads);
    c.head_dim = j.value("head_dim", c.head_dim);
    c.rope_theta = j.value("rope_theta", c.rope_theta);
    c.rms_eps = j.value("rms_eps", c.rms_eps);
    c.init_std = j.value("init_std", c.init_std);
    c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
    c.attention_dropout = j.value("attention_dropout", c.attention_dropout);
    c.max_positions = j.value("max_positions", c.max_positions);
    c.validate();
    return c;
  }
};

template <typename S>
struct LayerParams {
  RowMat<S> norm_attn;  // 1 x d
  RowMat<S> wq;         // d x (H*hd)
  RowMat<S> wk;         // d x (KV*hd)
  RowMat<S> wv;         // d x (KV*hd)
  RowMat<S> wo;         // (H*hd) x d
  RowMat<S> norm_ffn;   // 1 x d
  RowMat<S> w_gate;     // d x f
  RowMat<S> w_up;       // d x f
  RowMat<S> w_down;     // f x d
};

template <typename S>
struct Parameters {
  ModelConfig config;
  RowMat<S> embed;       // V x d
  std::vector<LayerParams<S>> layers;
  RowMat<S> norm_final;  // 1 x d
  RowMat<S> head;        // d x V

  // Visits every tensor in the canonical (checkpoint) order.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("embed", embed);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      fn(p + "norm_attn", layers[l].norm_attn);
      fn(p + "wq", layers[l].wq);
      fn(p + "wk", layers[l].wk);
      fn(p + "wv", layers[l].wv);
      fn(p + "wo", layers[l].wo);
      fn(p + "norm_ffn", layers[l].norm_ffn);
      fn(p + "w_gate", layers[l].w_gate);
      fn(p + "w_up", layers[l].w_up);
      fn(p + "w_down", layers[l].w_down);
    }
    fn("norm_final", norm_final);
    fn("head", head);
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<Parameters*>(this)->for_each_tensor(
        [&fn](const std::string& name, RowMat<S>& m) { fn(name, static_cast<const RowMat<S>&>(m)); });
  }

  long param_count() const {
    long n = 0;
    for_each_tensor([&n](const std::string&, const RowMat<S>& m) { n += m.size(); });
    return n;
  }

  template <typename T>
  Parameters<T> cast() const {
    Parameters<T> out;
    out.config = config;
    out.embed = embed.template cast<T>();
    out.layers.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      out.layers[l].norm_attn = layers[l].norm_attn.template cast<T>();
      out.layers[l].wq = layers[l].wq.template cast<T>();
      out.layers[l].wk = layers[l].wk.template cast<T>();
      out.layers[l].wv = layers[l].wv.template cast<T>();
      out.layers[l].wo = layers[l].wo.template cast<T>();
      out.layers[l].norm_ffn = layers[l].norm_ffn.template cast<T>();
      out.layers[l].w_gate = layers[l].w_gate.template cast<T>();
      out.layers[l].w_up = layers[l].w_up.template cast<T>();
      out.layers[l].w_down = layers[l].w_down.template cast<T>();
    }
    out.norm_final = norm_final.template cast<T>();
    out.head = head.template cast<T>();
    return out;
  }
};

// Shapes allocated to match `config`; projections ~ N(0, init_std^2), norm
// scales 1 (stream: kInit).
// Shape allocation only; every tensor zeroed.
template <typename S>
Parameters<S> allocate_parameters(const ModelConfig& config) {
  config.validate();
  Parameters<S> p;
  p.config = config;
  const int d = config.d_model, f = config.d_ff;
  const int hq = config.n_heads * config.head_dim;
  const int hkv = config.n_kv_heads * config.head_dim;
  p.embed.resize(config.vocab_size, d);
  p.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& layer : p.layers) {
    layer.norm_attn.resize(1, d);
    layer.wq.resize(d, hq);
    layer.wk.resize(d, hkv);
    layer.wv.resize(d, hkv);
    layer.wo.resize(hq, d);
    layer.norm_ffn.resize(1, d);
    layer.w_gate.resize(d, f);
    layer.w_up.resize(d, f);
    layer.w_down.resize(f, d);
  }
  p.norm_final.resize(1, d);
  p.head.resize(d, config.vocab_size);
  p.for_each_tensor([](const std::string&, RowMat<S>& m) { m.setZero(); });
  return p;
}

template <typename S>
Parameters<S> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  Parameters<S> p = allocate_parameters<S>(config);

  Rng rng = Rng::derive(seed, streams::kInit);
  p.for_each_tensor([&](const std::string& name, RowMat<S>& m) {
    if (name.find("norm") != std::string::npos) {
      m.setOnes();
      return;
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        m(i, j) = static_cast<S>(config.init_std * rng.normal());
  });
  return p;
}

template <typename S>
Parameters<S> zeros_like(const Parameters<S>& p) {
  Parameters<S> z = p;
  z.for_each_tensor([](const std::string&, RowMat<S>& m) { m.setZero(); });
  return z;
}

// ---------------------------------------------------------------------------
// Packed batches

struct Span {
  int begin = 0;
  int end = 0;      // one past the last token
  int parent = -1;  // span index this span attends to as a fixed prefix

  int len() const { return end - begin; }
};

struct PackedBatch {
  std::vector<int> tokens;
  std::vector<int> positions;  // rotary position per token
  std::vector<Span> spans;

  int size() const { return static_cast<int>(tokens.size()); }

  // Independent sequence with positions 0..n-1; returns its span index.
  int add_sequence(const std::vector<int>& ids) {
    const int begin = size();
    for (const int id : ids) {
      tokens.push_back(id);
      positions.push_back(static_cast<int>(tokens.size()) - 1 - begin);
    }
    spans.push_back({begin, size(), -1});
    return static_cast<int>(spans.size()) - 1;
  }

  // A child continues its parent's positions (prompt sharing).
  int add_child_sequence(int parent_span, const std::vector<int>& ids) {
    const Span& parent = spans[static_cast<std::size_t>(parent_span)];
    const int base = parent.len();
    const int begin = size();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      tokens.push_back(ids[i]);
      positions.push_back(base + static_cast<int>(i));
    }
    spans.push_back({begin, size(), parent_span});
    return static_cast<int>(spans.size()) - 1;
  }
};

// ---------------------------------------------------------------------------
// Forward cache

template <typename S>
struct LayerCache {
  RowMat<S> x;    // block input
  RowMat<S> q;    // post-rope
  RowMat<S> k;    // post-rope
  RowMat<S> v;
  RowMat<S> ctx;  // attention mix, pre-Wo
  RowMat<S> x2;   // post-attention residual
  RowMat<S> g;    // FFN gate pre-activation
  RowMat<S> u;    // FFN up
  std::vector<RowMat<S>> probs;  // per (span * n_heads + head): len x ctx_len
};

template <typename S>
struct ForwardCache {
  PackedBatch batch;
  std::vector<LayerCache<S>> layers;
  RowMat<S> x_final;
  RowMat<S> nf;
  RowMat<S> logits;
};

namespace detail {

template <typename S>
inline S silu(S x) {
  return x / (S(1) + std::exp(-x));
}

// y = x / rms(x) * w, rowwise; returns per-row 1/rms for the backward pass.
template <typename S>
inline void rmsnorm_rows(const RowMat<S>& x, const RowMat<S>& w, S eps, RowMat<S>& y,
                         Eigen::Matrix<S, Eigen::Dynamic, 1>& inv_rms) {
  const auto d = x.cols();
  y.resize(x.rows(), d);
  inv_rms.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S ms = x.row(r).squaredNorm() / S(d);
    const S inv = S(1) / std::sqrt(ms + eps);
    inv_rms(r) = inv;
    y.row(r) = x.row(r).cwiseProduct(w.row(0)) * inv;
  }
}

// dL/dx and dL/dw given dL/dy for y = x * inv_rms(x) .* w.
template <typename S>
inline void rmsnorm_backward(const RowMat<S>& x, const RowMat<S>& w,
                             const Eigen::Matrix<S, Eigen::Dynamic, 1>& inv_rms,
                             const RowMat<S>& dy, RowMat<S>& dx_accum, RowMat<S>& dw_accum) {
  const auto d = x.cols();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S inv = inv_rms(r);
    const auto xr = x.row(r);
    const auto dyr = dy.row(r);
    const auto wdy = dyr.cwiseProduct(w.row(0));
    const S dot = wdy.cwiseProduct(xr).sum();
    dx_accum.row(r) += wdy * inv - xr * (dot * inv * inv * inv / S(d));
    dw_accum.row(0) += dyr.cwiseProduct(xr) * inv;
  }
}

// In-place half-rotation rotary embedding over every head slice of m.
// Pairs (i, i + hd/2) within a head rotate by angle pos * theta^(-2i/hd).
template <typename S>
inline void rope_rows(RowMat<S>& m, const std::vector<int>& positions, int head_dim, double theta,
                      bool inverse) {
  const int half = head_dim / 2;
  const int n_heads = static_cast<int>(m.cols()) / head_dim;
  std::vector<S> cos_t(static_cast<std::size_t>(half)), sin_t(static_cast<std::size_t>(half));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double pos = positions[static_cast<std::size_t>(r)];
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(theta, -2.0 * i / head_dim);
      const double angle = pos * freq;
      cos_t[static_cast<std::size_t>(i)] = static_cast<S>(std::cos(angle));
      sin_t[static_cast<std::size_t>(i)] = static_cast<S>(inverse ? -std::sin(angle) : std::sin(angle));
    }
    for (int h = 0; h < n_heads; ++h) {
      S* base = m.row(r).data() + h * head_dim;
      for (int i = 0; i < half; ++i) {
        const S a = base[i], b = base[i + half];
        base[i] = a * cos_t[static_cast<std::size_t>(i)] - b * sin_t[static_cast<std::size_t>(i)];
        base[i + half] = a * sin_t[static_cast<std::size_t>(i)] + b * cos_t[static_cast<std::size_t>(i)];
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward

template <typename S>
void forward(const Parameters<S>& params, const PackedBatch& batch, ForwardCache<S>& cache) {
  const ModelConfig& cfg = params.config;
  const int T = batch.size();
  if (T == 0) throw InvalidConfig("empty batch");
  for (const int pos : batch.positions) {
    if (pos >= cfg.max_positions)
      throw SequenceTooLong(static_cast<std::size_t>(pos) + 1,
                            static_cast<std::size_t>(cfg.max_positions));
  }
  const int d = cfg.d_model;
  const int hd = cfg.head_dim;
  const int H = cfg.n_heads;
  const int KV = cfg.n_kv_heads;
  const int group = H / KV;
  const S scale = S(1) / std::sqrt(S(hd));

  cache.batch = batch;
  cache.layers.resize(static_cast<std::size_t>(cfg.n_layers));

  RowMat<S> x(T, d);
  for (int t = 0; t < T; ++t) x.row(t) = params.embed.row(batch.tokens[static_cast<std::size_t>(t)]);

  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_rms;
  RowMat<S> n1;
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& lc = cache.layers[static_cast<std::size_t>(l)];
    const auto& lp = params.layers[static_cast<std::size_t>(l)];
    lc.x = x;

    detail::rmsnorm_rows(lc.x, lp.norm_attn, static_cast<S>(cfg.rms_eps), n1, inv_rms);
    lc.q.noalias() = n1 * lp.wq;
    lc.k.noalias() = n1 * lp.wk;
    lc.v.noalias() = n1 * lp.wv;
    detail::rope_rows(lc.q, batch.positions, hd, cfg.rope_theta, false);
    detail::rope_rows(lc.k, batch.positions, hd, cfg.rope_theta, false);

    lc.ctx.resize(T, H * hd);
    lc.probs.assign(batch.spans.size() * static_cast<std::size_t>(H), RowMat<S>());
    for (std::size_t si = 0; si < batch.spans.size(); ++si) {
      const Span& span = batch.spans[si];
      const int ls = span.len();
      const Span* par = span.parent >= 0 ? &batch.spans[static_cast<std::size_t>(span.parent)] : nullptr;
      const int lp_len = par ? par->len() : 0;
      for (int h = 0; h < H; ++h) {
        const int kvh = h / group;
        auto q_blk = lc.q.block(span.begin, h * hd, ls, hd);
        auto k_own = lc.k.block(span.begin, kvh * hd, ls, hd);
        auto v_own = lc.v.block(span.begin, kvh * hd, ls, hd);

        RowMat<S>& probs = lc.probs[si * static_cast<std::size_t>(H) + static_cast<std::size_t>(h)];
        probs.resize(ls, lp_len + ls);
        if (par) {
          probs.block(0, 0, ls, lp_len).noalias() =
              q_blk * lc.k.block(par->begin, kvh * hd, lp_len, hd).transpose() * scale;
        }
        probs.block(0, lp_len, ls, ls).noalias() = q_blk * k_own.transpose() * scale;

        // Causal softmax: row i sees the parent fully plus own tokens <= i.
        for (int i = 0; i < ls; ++i) {
          auto row = probs.row(i);
          const int visible = lp_len + i + 1;
          const S max_v = row.head(visible).maxCoeff();
          row.head(visible) = (row.head(visible).array() - max_v).exp();
          const S total = row.head(visible).sum();
          row.head(visible) /= total;
          row.tail(ls - i - 1).setZero();
        }

        auto ctx_blk = lc.ctx.block(span.begin, h * hd, ls, hd);
        if (par) {
          ctx_blk.noalias() = probs.block(0, 0, ls, lp_len) * lc.v.block(par->begin, kvh * hd, lp_len, hd);
          ctx_blk.noalias() += probs.block(0, lp_len, ls, ls) * v_own;
        } else {
          ctx_blk.noalias() = probs.block(0, lp_len, ls, ls) * v_own;
        }
      }
    }

    lc.x2 = lc.x;
    lc.x2.noalias() += lc.ctx * lp.wo;

    detail::rmsnorm_rows(lc.x2, lp.norm_ffn, static_cast<S>(cfg.rms_eps), n1, inv_rms);
    lc.g.noalias() = n1 * lp.w_gate;
    lc.u.noalias() = n1 * lp.w_up;
    RowMat<S> hbuf = lc.g.unaryExpr([](S v) { return detail::silu(v); }).cwiseProduct(lc.u);
    x = lc.x2;
    x.noalias() += hbuf * lp.w_down;
  }

  cache.x_final = x;
  detail::rmsnorm_rows(cache.x_final, params.norm_final, static_cast<S>(cfg.rms_eps), cache.nf, inv_rms);
  cache.logits.noalias() = cache.nf * params.head;
}

// ---------------------------------------------------------------------------
// Backward from dL/dlogits (loss-agnostic)

template <typename S>
void backward_from_dlogits(const Parameters<S>& params, const ForwardCache<S>& cache,
                           const RowMat<S>& dlogits, Parameters<S>& grads) {
  const ModelConfig& cfg = params.config;
  const PackedBatch& batch = cache.batch;
  const int T = batch.size();
  const int d = cfg.d_model;
  const int hd = cfg.head_dim;
  const int H = cfg.n_heads;
  const int KV = cfg.n_kv_heads;
  const int group = H / KV;
  const S scale = S(1) / std::sqrt(S(hd));
  const S eps = static_cast<S>(cfg.rms_eps);

  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_rms;
  RowMat<S> n_buf;

  grads.head.noalias() += cache.nf.transpose() * dlogits;
  RowMat<S> dnf = dlogits * params.head.transpose();

  RowMat<S> dx = RowMat<S>::Zero(T, d);
  detail::rmsnorm_rows(cache.x_final, params.norm_final, eps, n_buf, inv_rms);
  detail::rmsnorm_backward(cache.x_final, params.norm_final, inv_rms, dnf, dx, grads.norm_final);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& lc = cache.layers[static_cast<std::size_t>(l)];
    const auto& lp = params.layers[static_cast<std::size_t>(l)];
    auto& lg = grads.layers[static_cast<std::size_t>(l)];

    // FFN block: x_out = x2 + silu(g) .* u * w_down, g/u = rmsnorm(x2) * w.
    detail::rmsnorm_rows(lc.x2, lp.norm_ffn, eps, n_buf, inv_rms);
    RowMat<S> sg = lc.g.unaryExpr([](S v) { return detail::silu(v); });
    RowMat<S> hbuf = sg.cwiseProduct(lc.u);
    lg.w_down.noalias() += hbuf.transpose() * dx;
    RowMat<S> dh = dx * lp.w_down.transpose();
    RowMat<S> du = dh.cwiseProduct(sg);
    // silu'(g) = sig(g) * (1 + g * (1 - sig(g))), with sig(g) = silu(g)/g.
    RowMat<S> dsig = lc.g.unaryExpr([](S g) {
      const S sig = S(1) / (S(1) + std::exp(-g));
      return sig * (S(1) + g * (S(1) - sig));
    });
    RowMat<S> dg = dh.cwiseProduct(lc.u).cwiseProduct(dsig);
    lg.w_gate.noalias() += n_buf.transpose() * dg;
    lg.w_up.noalias() += n_buf.transpose() * du;
    RowMat<S> dn2 = dg * lp.w_gate.transpose();
    dn2.noalias() += du * lp.w_up.transpose();
    detail::rmsnorm_backward(lc.x2, lp.norm_ffn, inv_rms, dn2, dx, lg.norm_ffn);

    // Attention block: x2 = x + ctx * wo.
    lg.wo.noalias() += lc.ctx.transpose() * dx;
    RowMat<S> dctx = dx * lp.wo.transpose();

    RowMat<S> dq = RowMat<S>::Zero(T, H * hd);
    RowMat<S> dk = RowMat<S>::Zero(T, KV * hd);
    RowMat<S> dv = RowMat<S>::Zero(T, KV * hd);
    for (std::size_t si = 0; si < batch.spans.size(); ++si) {
      const Span& span = batch.spans[si];
      const int ls = span.len();
      const Span* par = span.parent >= 0 ? &batch.spans[static_cast<std::size_t>(span.parent)] : nullptr;
      const int lp_len = par ? par->len() : 0;
      for (int h = 0; h < H; ++h) {
        const int kvh = h / group;
        const RowMat<S>& probs = lc.probs[si * static_cast<std::size_t>(H) + static_cast<std::size_t>(h)];
        auto dctx_blk = dctx.block(span.begin, h * hd, ls, hd);

        RowMat<S> dprobs(ls, lp_len + ls);
        if (par) {
          dprobs.block(0, 0, ls, lp_len).noalias() =
              dctx_blk * lc.v.block(par->begin, kvh * hd, lp_len, hd).transpose();
          dv.block(par->begin, kvh * hd, lp_len, hd).noalias() +=
              probs.block(0, 0, ls, lp_len).transpose() * dctx_blk;
        }
        dprobs.block(0, lp_len, ls, ls).noalias() =
            dctx_blk * lc.v.block(span.begin, kvh * hd, ls, hd).transpose();
        dv.block(span.begin, kvh * hd, ls, hd).noalias() +=
            probs.block(0, lp_len, ls, ls).transpose() * dctx_blk;

        // Softmax backward: ds = p .* (dp - sum(p .* dp)); masked entries have
        // p = 0 and so contribute nothing.
        RowMat<S> dscores(ls, lp_len + ls);
        for (int i = 0; i < ls; ++i) {
          const S dot = probs.row(i).cwiseProduct(dprobs.row(i)).sum();
          dscores.row(i) = (probs.row(i).array() * (dprobs.row(i).array() - dot)).matrix();
        }

        auto q_blk = lc.q.block(span.begin, h * hd, ls, hd);
        if (par) {
          dq.block(span.begin, h * hd, ls, hd).noalias() +=
              dscores.block(0, 0, ls, lp_len) * lc.k.block(par->begin, kvh * hd, lp_len, hd) * scale;
          dk.block(par->begin, kvh * hd, lp_len, hd).noalias() +=
              dscores.block(0, 0, ls, lp_len).transpose() * q_blk * scale;
        }
        dq.block(span.begin, h * hd, ls, hd).noalias() +=
            dscores.block(0, lp_len, ls, ls) * lc.k.block(span.begin, kvh * hd, ls, hd) * scale;
        dk.block(span.begin, kvh * hd, ls, hd).noalias() +=
            dscores.block(0, lp_len, ls, ls).transpose() * q_blk * scale;
      }
    }

    detail::rope_rows(dq, batch.positions, hd, cfg.rope_theta, true);
    detail::rope_rows(dk, batch.positions, hd, cfg.rope_theta, true);

    detail::rmsnorm_rows(lc.x, lp.norm_attn, eps, n_buf, inv_rms);
    lg.wq.noalias() += n_buf.transpose() * dq;
    lg.wk.noalias() += n_buf.transpose() * dk;
    lg.wv.noalias() += n_buf.transpose() * dv;
    RowMat<S> dn1 = dq * lp.wq.transpose();
    dn1.noalias() += dk * lp.wk.transpose();
    dn1.noalias() += dv * lp.wv.transpose();
    detail::rmsnorm_backward(lc.x, lp.norm_attn, inv_rms, dn1, dx, lg.norm_attn);
  }

  for (int t = 0; t < T; ++t)
    grads.embed.row(batch.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
}

// ---------------------------------------------------------------------------
// Cross-entropy on packed logits

// targets[t] = token id whose logit row t predicts, or -1 for no loss.
template <typename S>
S ce_loss_and_dlogits(const RowMat<S>& logits, const std::vector<int>& targets,
                      RowMat<S>& dlogits) {
  long count = 0;
  for (const int t : targets) count += t >= 0;
  if (count == 0) throw EmptyMask();

  dlogits.setZero(logits.rows(), logits.cols());
  S loss = 0;
  const S inv_count = S(1) / S(count);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int target = targets[static_cast<std::size_t>(r)];
    if (target < 0) continue;
    const auto row = logits.row(r);
    const S max_v = row.maxCoeff();
    RowMat<S> p = (row.array() - max_v).exp().matrix();
    const S total = p.sum();
    loss -= (row(target) - max_v - std::log(total)) * inv_count;
    dlogits.row(r) = p * (inv_count / total);
    dlogits(r, target) -= inv_count;
  }
  if (!std::isfinite(static_cast<double>(loss))) throw NonFiniteLoss(-1);
  return loss;
}

// Next-token targets for a parentless packed batch (full-sequence loss).
inline std::vector<int> next_token_targets(const PackedBatch& batch) {
  std::vector<int> targets(static_cast<std::size_t>(batch.size()), -1);
  for (const Span& span : batch.spans) {
    for (int t = span.begin; t + 1 < span.end; ++t)
      targets[static_cast<std::size_t>(t)] = batch.tokens[static_cast<std::size_t>(t) + 1];
  }
  return targets;
}

}  // namespace statewalk
