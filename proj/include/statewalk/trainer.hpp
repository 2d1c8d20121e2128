#pragma once
// Supervised pretraining: one epoch of next-token cross-entropy over the train
// split with a warmup + linear-decay schedule, periodic greedy pass@1 probes,
// and bitwise-resumable checkpoints.

#include <filesystem>
#include <vector>

#include "statewalk/env.hpp"
#include "statewalk/model.hpp"
#include "statewalk/runio.hpp"
#include "statewalk/verifier.hpp"
#include "statewalk/vocab.hpp"

namespace statewalk {

struct PretrainConfig {
  int batch_size = 64;
  int epochs = 1;
  int max_length = 128;
  double learning_rate = 1e-3;
  double warmup_ratio = 0.05;   // fraction of total steps ramped linearly from 0
  int grad_accum = 1;           // fixed at 1
  long eval_every = 100;        // pass@1 probe cadence in optimizer steps
  long save_every = 0;          // checkpoint cadence; 0 = final checkpoint only
  int train_eval_subset = 512;  // train problems probed for pass1_train
  int max_new_tokens = 64;      // decode budget for the probes
  std::uint64_t seed = 42;

  void validate() const {
    if (batch_size < 1) throw InvalidConfig("batch_size must be positive");
    if (epochs < 1) throw InvalidConfig("epochs must be positive");
    if (max_length < 3) throw InvalidConfig("max_length too small for any sequence");
    if (learning_rate <= 0) throw InvalidConfig("learning_rate must be positive");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) throw InvalidConfig("warmup_ratio must be in [0,1)");
    if (grad_accum != 1) throw InvalidConfig("grad_accum is fixed at 1");
    if (eval_every < 1) throw InvalidConfig("eval_every must be positive");
    if (save_every < 0) throw InvalidConfig("save_every must be >= 0");
    if (train_eval_subset < 1) throw InvalidConfig("train_eval_subset must be positive");
    if (max_new_tokens < 1) throw InvalidConfig("max_new_tokens must be positive");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"batch_size", batch_size},
                          {"epochs", epochs},
                          {"max_length", max_length},
                          {"learning_rate", learning_rate},
                          {"warmup_ratio", warmup_ratio},
                          {"grad_accum", grad_accum},
                          {"eval_every", eval_every},
                          {"save_every", save_every},
                          {"train_eval_subset", train_eval_subset},
                          {"max_new_tokens", max_new_tokens},
                          {"seed", seed}};
  }

  static PretrainConfig from_json(const nlohmann::json& j) {
    PretrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.max_length = j.value("max_length", c.max_length);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
    c.grad_accum = j.value("grad_accum", c.grad_accum);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.save_every = j.value("save_every", c.save_every);
    c.train_eval_subset = j.value("train_eval_subset", c.train_eval_subset);
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

// --- sequence assembly --------------------------------------------------------

struct AssembledSequence {
  std::vector<int> ids;        // <bos> ++ prompt ++ completion (++ <pad> padding)
  std::vector<char> loss_mask; // loss_mask[t] == 1 iff position t is a trained target
};

// Full-sequence loss: every position 1..L-1 of the real sequence is a target
// (the terminal <pad> included); <bos> and right-padding are not. pad_to == 0
// leaves the sequence unpadded; otherwise ids are right-padded with <pad>.
AssembledSequence assemble_sequence(const ProblemInstance& instance, int max_length,
                                    int pad_to = 0);

// --- optimizer ------------------------------------------------------------------

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  AdamMoments state;

  void init(const Parameters<float>& params) {
    state.m = zeros_like(params);
    state.v = zeros_like(params);
    state.t = 0;
  }

  void step(Parameters<float>& params, const Parameters<float>& grads, double lr);
};

// Learning rate for 1-based optimizer step t: linear 0 -> lr over the first
// ceil(warmup_ratio * total) steps, then linear lr -> 0 at t == total.
double lr_at(const PretrainConfig& cfg, long total_steps, long t);

// Seeded epoch permutation (Fisher-Yates on stream kShuffle); each epoch
// visits every index exactly once.
std::vector<long> epoch_order(std::uint64_t seed, long epoch, long n);

// --- evaluation probe -----------------------------------------------------------

// Fraction of problems whose greedy completion matches the ground truth
// exactly. Chunked so the prefill cache stays bounded.
double greedy_pass1(const Parameters<float>& params, const EnvTables& tables,
                    const std::vector<ProblemInstance>& problems, int max_new, int chunk = 64);

// --- pretraining loop -------------------------------------------------------------

struct PretrainResult {
  long total_steps = 0;
  std::vector<double> losses;  // pre-update batch loss per optimizer step
  std::filesystem::path final_checkpoint;
};

// Runs the loop, appending metric rows to run.metrics_path() every eval_every
// steps (plus step 0 and the final step) and saving checkpoints under
// run.checkpoints_dir(). resume_from, if given, must be a checkpoint with
// optimizer state; training continues at its recorded step and reproduces the
// uninterrupted run bitwise. Throws NonFiniteLoss with the offending step.
PretrainResult pretrain(const PretrainConfig& cfg, const ModelConfig& model_cfg,
                        const Dataset& dataset, const RunDir& run,
                        const std::filesystem::path* resume_from = nullptr);

}  // namespace statewalk
