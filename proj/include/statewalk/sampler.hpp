#pragma once
// Autoregressive decoding on top of the packed forward pass.
//
// Three entry points share one incremental KV-cache core:
//   * sample()        — one continuation for one prompt (reference semantics).
//   * sample_groups() — n continuations per prompt; every group shares its
//                       prompt's KV rows, so the prompt is forwarded once.
//   * SampleTree      — many samples from one prompt at one temperature; a
//                       prefix tree caches logits and KV rows per distinct
//                       continuation, so shared prefixes cost nothing.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <utility>
#include <vector>

#include "statewalk/errors.hpp"
#include "statewalk/model.hpp"
#include "statewalk/rng.hpp"
#include "statewalk/vocab.hpp"

namespace statewalk {

// ---------------------------------------------------------------------------
// Drawing one token from a logits row

// Temperature + nucleus draw. temperature == 0 is greedy (argmax, lowest id on
// ties; rng untouched). Nucleus keeps the smallest set of highest-probability
// tokens with total mass >= top_p, renormalized; the draw itself walks the CDF
// in ascending token-id order.
template <typename S>
int sample_token(const RowMat<S>& logits, double temperature, double top_p, Rng& rng) {
  if (temperature < 0.0) throw InvalidConfig("temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidConfig("top_p must be in (0, 1]");
  const int n = static_cast<int>(logits.cols());
  if (temperature == 0.0) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (logits(0, i) > logits(0, best)) best = i;
    return best;
  }
  std::vector<double> p(static_cast<std::size_t>(n));
  double max_z = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) max_z = std::max(max_z, double(logits(0, i)) / temperature);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(double(logits(0, i)) / temperature - max_z);
    total += p[static_cast<std::size_t>(i)];
  }
  for (auto& v : p) v /= total;
  if (top_p < 1.0) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)];
    });
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < order.size() && cum < top_p) {
      cum += p[static_cast<std::size_t>(order[keep])];
      ++keep;
    }
    std::vector<double> filtered(static_cast<std::size_t>(n), 0.0);
    double kept_mass = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto id = static_cast<std::size_t>(order[i]);
      filtered[id] = p[id];
      kept_mass += p[id];
    }
    for (auto& v : filtered) v /= kept_mass;
    p = std::move(filtered);
  }
  return static_cast<int>(rng.categorical(p.data(), p.size()));
}

// log softmax(logits)[token] — the untempered policy log-probability, used for
// importance ratios regardless of the sampling temperature.
template <typename S>
S token_logprob(const RowMat<S>& logits, int token) {
  const S max_z = logits.row(0).maxCoeff();
  const S lse = max_z + std::log((logits.row(0).array() - max_z).exp().sum());
  return logits(0, token) - lse;
}

// ---------------------------------------------------------------------------
// KV cache blocks

// Post-rope key rows and value rows per layer. `len` rows are valid; the
// matrices are sized to capacity up front so decoding never reallocates.
template <typename S>
struct KvBlock {
  std::vector<RowMat<S>> k;  // [n_layers], capacity x (n_kv_heads * head_dim)
  std::vector<RowMat<S>> v;
  int len = 0;

  static KvBlock make(const ModelConfig& cfg, int capacity) {
    KvBlock b;
    const int kvw = cfg.n_kv_heads * cfg.head_dim;
    b.k.assign(static_cast<std::size_t>(cfg.n_layers), RowMat<S>(capacity, kvw));
    b.v.assign(static_cast<std::size_t>(cfg.n_layers), RowMat<S>(capacity, kvw));
    return b;
  }
};

// A forwarded prompt: its KV rows plus the logits at its last position (which
// predict the first response token).
template <typename S>
struct PromptState {
  KvBlock<S> kv;
  RowMat<S> logits;  // 1 x vocab
};

// One packed forward over all prompts, then per-prompt KV extraction. Callers
// with large prompt sets should chunk to bound the transient forward cache.
template <typename S>
std::vector<PromptState<S>> prefill(const Parameters<S>& params,
                                    const std::vector<std::vector<int>>& prompts) {
  const ModelConfig& cfg = params.config;
  PackedBatch batch;
  for (const auto& prompt : prompts) {
    if (prompt.empty()) throw InvalidConfig("empty prompt");
    batch.add_sequence(prompt);
  }
  ForwardCache<S> cache;
  forward(params, batch, cache);

  std::vector<PromptState<S>> states;
  states.reserve(prompts.size());
  for (std::size_t si = 0; si < batch.spans.size(); ++si) {
    const Span& span = batch.spans[si];
    PromptState<S> st;
    st.kv = KvBlock<S>::make(cfg, span.len());
    st.kv.len = span.len();
    for (int l = 0; l < cfg.n_layers; ++l) {
      st.kv.k[static_cast<std::size_t>(l)] =
          cache.layers[static_cast<std::size_t>(l)].k.middleRows(span.begin, span.len());
      st.kv.v[static_cast<std::size_t>(l)] =
          cache.layers[static_cast<std::size_t>(l)].v.middleRows(span.begin, span.len());
    }
    st.logits = cache.logits.row(span.end - 1);
    states.push_back(std::move(st));
  }
  return states;
}

namespace detail {

// One walker = one growing continuation: a shared read-only prompt block plus
// its own appended rows. decode_step() advances a batch of walkers by one
// token each, appending a KV row at own->len and returning the logits rows.
template <typename S>
struct WalkerRef {
  const KvBlock<S>* prompt = nullptr;
  KvBlock<S>* own = nullptr;
  int token = 0;
};

template <typename S>
RowMat<S> decode_step(const Parameters<S>& params, std::vector<WalkerRef<S>>& walkers) {
  const ModelConfig& cfg = params.config;
  const int W = static_cast<int>(walkers.size());
  const int d = cfg.d_model;
  const int hd = cfg.head_dim;
  const int H = cfg.n_heads;
  const int group = H / cfg.n_kv_heads;
  const S scale = S(1) / std::sqrt(S(hd));
  const S eps = static_cast<S>(cfg.rms_eps);

  std::vector<int> positions(static_cast<std::size_t>(W));
  RowMat<S> x(W, d);
  for (int w = 0; w < W; ++w) {
    const auto& ref = walkers[static_cast<std::size_t>(w)];
    const int pos = ref.prompt->len + ref.own->len;
    if (pos >= cfg.max_positions)
      throw SequenceTooLong(static_cast<std::size_t>(pos) + 1,
                            static_cast<std::size_t>(cfg.max_positions));
    if (ref.own->len >= ref.own->k[0].rows()) throw InvalidConfig("kv block capacity exhausted");
    positions[static_cast<std::size_t>(w)] = pos;
    x.row(w) = params.embed.row(ref.token);
  }

  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_rms;
  RowMat<S> n1, q, kn, vn, gate, up, ctx(W, H * hd);
  Eigen::Matrix<S, Eigen::Dynamic, 1> scores;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lp = params.layers[static_cast<std::size_t>(l)];
    detail::rmsnorm_rows(x, lp.norm_attn, eps, n1, inv_rms);
    q.noalias() = n1 * lp.wq;
    kn.noalias() = n1 * lp.wk;
    vn.noalias() = n1 * lp.wv;
    detail::rope_rows(q, positions, hd, cfg.rope_theta, false);
    detail::rope_rows(kn, positions, hd, cfg.rope_theta, false);

    for (int w = 0; w < W; ++w) {
      auto& ref = walkers[static_cast<std::size_t>(w)];
      KvBlock<S>& own = *ref.own;
      const KvBlock<S>& pr = *ref.prompt;
      auto& kl = own.k[static_cast<std::size_t>(l)];
      auto& vl = own.v[static_cast<std::size_t>(l)];
      kl.row(own.len) = kn.row(w);
      vl.row(own.len) = vn.row(w);
      const int plen = pr.len;
      const int olen = own.len + 1;
      for (int h = 0; h < H; ++h) {
        const int kvh = h / group;
        const auto q_h = q.row(w).segment(h * hd, hd);
        scores.resize(plen + olen);
        scores.head(plen).noalias() =
            pr.k[static_cast<std::size_t>(l)].block(0, kvh * hd, plen, hd) * q_h.transpose() *
            scale;
        scores.tail(olen).noalias() = kl.block(0, kvh * hd, olen, hd) * q_h.transpose() * scale;
        const S max_v = scores.maxCoeff();
        scores = (scores.array() - max_v).exp();
        scores /= scores.sum();
        auto ctx_h = ctx.row(w).segment(h * hd, hd);
        ctx_h.noalias() =
            scores.head(plen).transpose() * pr.v[static_cast<std::size_t>(l)].block(0, kvh * hd, plen, hd);
        ctx_h.noalias() += scores.tail(olen).transpose() * vl.block(0, kvh * hd, olen, hd);
      }
    }
    x.noalias() += ctx * lp.wo;

    detail::rmsnorm_rows(x, lp.norm_ffn, eps, n1, inv_rms);
    gate.noalias() = n1 * lp.w_gate;
    up.noalias() = n1 * lp.w_up;
    x.noalias() += gate.unaryExpr([](S v) { return detail::silu(v); }).cwiseProduct(up) * lp.w_down;
  }

  detail::rmsnorm_rows(x, params.norm_final, eps, n1, inv_rms);
  RowMat<S> logits;
  logits.noalias() = n1 * params.head;
  for (auto& ref : walkers) ref.own->len += 1;
  return logits;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rollout groups

template <typename S>
struct Rollout {
  std::vector<int> tokens;    // generated ids; ends with <pad> unless max_new hit first
  std::vector<S> logprobs;    // log pi(token | prefix), untempered, one per token
};

template <typename S>
using SampledGroup = std::vector<Rollout<S>>;

// n_rollouts continuations per prompt. rngs[p][j] drives rollout j of prompt p
// and is consumed in place. The prompt forward runs once per prompt; all its
// rollouts share the resulting KV rows.
template <typename S>
std::vector<SampledGroup<S>> sample_groups(const Parameters<S>& params,
                                           const std::vector<std::vector<int>>& prompts,
                                           int n_rollouts, double temperature, double top_p,
                                           int max_new, std::vector<std::vector<Rng>>& rngs) {
  if (n_rollouts < 1) throw InvalidConfig("n_rollouts must be >= 1");
  if (max_new < 1) throw InvalidConfig("max_new must be >= 1");
  if (temperature < 0.0) throw InvalidConfig("temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidConfig("top_p must be in (0, 1]");
  if (rngs.size() != prompts.size()) throw InvalidConfig("rng grid shape mismatch");
  for (const auto& row : rngs)
    if (static_cast<int>(row.size()) != n_rollouts) throw InvalidConfig("rng grid shape mismatch");

  const ModelConfig& cfg = params.config;
  const auto prompt_states = prefill(params, prompts);
  const int P = static_cast<int>(prompts.size());
  const int W = P * n_rollouts;

  struct Walker {
    int prompt;
    int rollout;
    KvBlock<S> kv;
    RowMat<S> logits;  // distribution for the next token
    bool done = false;
  };
  std::vector<Walker> walkers;
  walkers.reserve(static_cast<std::size_t>(W));
  for (int p = 0; p < P; ++p)
    for (int j = 0; j < n_rollouts; ++j) {
      Walker w;
      w.prompt = p;
      w.rollout = j;
      w.kv = KvBlock<S>::make(cfg, max_new);
      w.logits = prompt_states[static_cast<std::size_t>(p)].logits;
      walkers.push_back(std::move(w));
    }

  std::vector<SampledGroup<S>> out(static_cast<std::size_t>(P),
                                   SampledGroup<S>(static_cast<std::size_t>(n_rollouts)));
  std::vector<detail::WalkerRef<S>> batch;
  std::vector<int> batch_index;
  for (;;) {
    batch.clear();
    batch_index.clear();
    for (int w = 0; w < W; ++w) {
      Walker& wk = walkers[static_cast<std::size_t>(w)];
      if (wk.done) continue;
      Rng& rng = rngs[static_cast<std::size_t>(wk.prompt)][static_cast<std::size_t>(wk.rollout)];
      const int t = sample_token(wk.logits, temperature, top_p, rng);
      Rollout<S>& r = out[static_cast<std::size_t>(wk.prompt)][static_cast<std::size_t>(wk.rollout)];
      r.tokens.push_back(t);
      r.logprobs.push_back(token_logprob(wk.logits, t));
      if (t == tok::kPad || static_cast<int>(r.tokens.size()) == max_new) {
        wk.done = true;
        continue;
      }
      batch.push_back({&prompt_states[static_cast<std::size_t>(wk.prompt)].kv, &wk.kv, t});
      batch_index.push_back(w);
    }
    if (batch.empty()) break;
    const RowMat<S> logits = detail::decode_step(params, batch);
    for (std::size_t i = 0; i < batch_index.size(); ++i)
      walkers[static_cast<std::size_t>(batch_index[i])].logits = logits.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

// One continuation for one prompt; the reference decoder the cached variants
// are tested against.
template <typename S>
std::vector<int> sample(const Parameters<S>& params, const std::vector<int>& prompt_ids,
                        double temperature, double top_p, int max_new, Rng& rng) {
  std::vector<std::vector<Rng>> rngs{{rng}};
  const auto groups = sample_groups(params, {prompt_ids}, 1, temperature, top_p, max_new, rngs);
  rng = rngs[0][0];
  return groups[0][0].tokens;
}

// ---------------------------------------------------------------------------
// Prefix-tree cached sampling

// Draws many samples from one prompt at one temperature. Each distinct
// continuation is forwarded through the model exactly once: a node stores the
// logits after its path plus its per-layer KV row, and later samples that walk
// the same path reuse them. Cache misses across concurrent walkers are
// deduplicated and forwarded in one batch per wave.
template <typename S>
class SampleTree {
 public:
  SampleTree(const Parameters<S>* params, PromptState<S> prompt, double temperature, double top_p,
             int max_new)
      : params_(params),
        prompt_(std::move(prompt)),
        temperature_(temperature),
        top_p_(top_p),
        max_new_(max_new) {
    if (max_new_ < 1) throw InvalidConfig("max_new must be >= 1");
    Node root;
    root.parent = -1;
    root.token = -1;
    root.depth = 0;
    root.logits = prompt_.logits;
    nodes_.push_back(std::move(root));
  }

  // One sequence per rng, identical to what sample() would produce with that
  // rng. Rngs are consumed in place.
  std::vector<std::vector<int>> draw(std::vector<Rng>& rngs) {
    const int W = static_cast<int>(rngs.size());
    std::vector<std::vector<int>> seqs(static_cast<std::size_t>(W));
    std::vector<int> at(static_cast<std::size_t>(W), 0);  // current node per walker
    std::vector<bool> done(static_cast<std::size_t>(W), false);
    int active = W;
    while (active > 0) {
      // (node, token) -> expansion slot for this wave's cache misses.
      std::vector<std::pair<std::pair<int, int>, std::vector<int>>> misses;
      for (int w = 0; w < W; ++w) {
        if (done[static_cast<std::size_t>(w)]) continue;
        const int node = at[static_cast<std::size_t>(w)];
        const int t = sample_token(nodes_[static_cast<std::size_t>(node)].logits, temperature_,
                                   top_p_, rngs[static_cast<std::size_t>(w)]);
        auto& seq = seqs[static_cast<std::size_t>(w)];
        seq.push_back(t);
        if (t == tok::kPad || static_cast<int>(seq.size()) == max_new_) {
          done[static_cast<std::size_t>(w)] = true;
          --active;
          continue;
        }
        const int child = find_child(node, t);
        if (child >= 0) {
          at[static_cast<std::size_t>(w)] = child;
        } else {
          bool found = false;
          for (auto& m : misses)
            if (m.first == std::make_pair(node, t)) {
              m.second.push_back(w);
              found = true;
              break;
            }
          if (!found) misses.push_back({{node, t}, {w}});
        }
      }
      // Expand the wave's misses in bounded batches.
      for (std::size_t base = 0; base < misses.size(); base += kExpandChunk) {
        const std::size_t count = std::min(kExpandChunk, misses.size() - base);
        std::vector<KvBlock<S>> scratch;
        std::vector<detail::WalkerRef<S>> batch;
        scratch.reserve(count);
        batch.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
          const int node = misses[base + i].first.first;
          const int token = misses[base + i].first.second;
          scratch.push_back(assemble_chain(node));
          batch.push_back({&prompt_.kv, &scratch.back(), token});
        }
        const RowMat<S> logits = detail::decode_step(*params_, batch);
        for (std::size_t i = 0; i < count; ++i) {
          const int parent = misses[base + i].first.first;
          const int token = misses[base + i].first.second;
          Node node;
          node.parent = parent;
          node.token = token;
          node.depth = nodes_[static_cast<std::size_t>(parent)].depth + 1;
          node.logits = logits.row(static_cast<Eigen::Index>(i));
          const int row = node.depth - 1;
          node.k.resize(params_->config.n_layers, scratch[i].k[0].cols());
          node.v.resize(params_->config.n_layers, scratch[i].v[0].cols());
          for (int l = 0; l < params_->config.n_layers; ++l) {
            node.k.row(l) = scratch[i].k[static_cast<std::size_t>(l)].row(row);
            node.v.row(l) = scratch[i].v[static_cast<std::size_t>(l)].row(row);
          }
          const int id = static_cast<int>(nodes_.size());
          nodes_.push_back(std::move(node));
          nodes_[static_cast<std::size_t>(parent)].children.push_back({token, id});
          for (const int w : misses[base + i].second) at[static_cast<std::size_t>(w)] = id;
        }
      }
    }
    return seqs;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int parent;
    int token;
    int depth;
    RowMat<S> logits;    // 1 x vocab
    RowMat<S> k, v;      // n_layers x (n_kv_heads * head_dim), empty at root
    std::vector<std::pair<int, int>> children;  // (token, node id)
  };

  static constexpr std::size_t kExpandChunk = 128;

  int find_child(int node, int token) const {
    for (const auto& [t, id] : nodes_[static_cast<std::size_t>(node)].children)
      if (t == token) return id;
    return -1;
  }

  // Scratch KV holding the node's ancestor rows (depth rows) with room for one
  // appended row, so decode_step sees the same layout as a linear walker.
  KvBlock<S> assemble_chain(int node) const {
    const Node& n = nodes_[static_cast<std::size_t>(node)];
    KvBlock<S> block = KvBlock<S>::make(params_->config, n.depth + 1);
    block.len = n.depth;
    for (int cur = node; cur > 0; cur = nodes_[static_cast<std::size_t>(cur)].parent) {
      const Node& c = nodes_[static_cast<std::size_t>(cur)];
      for (int l = 0; l < params_->config.n_layers; ++l) {
        block.k[static_cast<std::size_t>(l)].row(c.depth - 1) = c.k.row(l);
        block.v[static_cast<std::size_t>(l)].row(c.depth - 1) = c.v.row(l);
      }
    }
    return block;
  }

  const Parameters<S>* params_;
  PromptState<S> prompt_;
  double temperature_;
  double top_p_;
  int max_new_;
  std::vector<Node> nodes_;
};

}  // namespace statewalk
