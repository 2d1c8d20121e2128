#pragma once
// Synthetic environment: four generation tables and the train / train_rl /
// eval instance samplers.  A problem is a random walk through two coupled
// transition systems; the prompt exposes the problem-state trajectory plus
// spurious context and irrelevant tokens, and the completion is the
// state/action trajectory that realizes it.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "statewalk/rng.hpp"

namespace statewalk {

using RowMatd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMati = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Split { train = 0, train_rl = 1, eval = 2 };

const char* split_name(Split split);
Split split_from_name(const std::string& name);

enum class ContextMode { spurious = 0, uniform = 1, absent = 2 };

const char* context_mode_name(ContextMode mode);
ContextMode context_mode_from_name(const std::string& name);

struct SplitSizes {
  long train = 200000;
  long train_rl = 128;
  long eval = 512;

  long of(Split split) const {
    return split == Split::train ? train : split == Split::train_rl ? train_rl : eval;
  }
};

struct EnvConfig {
  int n_dim = 20;      // N_A: actions (and numeric alphabet for irrelevant tokens)
  int n_ctx = 20;      // N_S = N_P = N_C
  int n_irr_ctx = 10;  // irrelevant token count per prompt
  int k_min = 5;
  int k_max = 10;
  double alpha_train = 0.3;  // Dirichlet concentration for action priors
  double beta_train = 0.3;   // Dirichlet concentration for context priors
  std::uint64_t seed = 42;
  SplitSizes split_sizes;
  ContextMode context_mode = ContextMode::spurious;

  void validate() const;  // throws InvalidConfig
  nlohmann::json to_json() const;
  static EnvConfig from_json(const nlohmann::json& j);
};

struct EnvTables {
  RowMati state_transitions;           // T_S: N_S x N_A, entries in [0, N_S)
  RowMati problem_state_transitions;   // T_P: N_P x N_A, row-distinct entries in [0, N_P)
  RowMatd action_probs;                // P_action(A|S): N_S x N_A simplex rows
  RowMatd context_probs_train;         // P_context(C|A): N_A x N_C simplex rows
  std::uint64_t seed = 0;

  nlohmann::json to_json(const EnvConfig& config) const;
  static EnvTables from_json(const nlohmann::json& j);
};

struct ProblemInstance {
  long idx = 0;
  Split split = Split::train;
  int k = 0;
  std::vector<int> actions;         // a_0..a_{k-1}
  std::vector<int> states;          // s_0..s_k
  std::vector<int> problem_states;  // p_0..p_k
  std::vector<int> contexts;        // c_0..c_{k-1}; empty when context_mode = absent
  std::vector<int> irrelevant;      // i_0..i_{n_irr_ctx-1}
  std::vector<int> prompt_ids;
  std::vector<int> completion_ids;

  nlohmann::json to_json() const;
  static ProblemInstance from_json(const nlohmann::json& j);
};

// Deterministic function of config.seed (stream: kTables).
EnvTables build_tables(const EnvConfig& config);

// Deterministic function of (config.seed, split, idx) (stream: kInstance).
ProblemInstance sample_instance(const EnvTables& tables, const EnvConfig& config, Split split,
                                long idx);

// "S s0 [P p C c]* P pk [I i]* :" per the instance's fields; no <bos>.
std::vector<int> render_prompt(const ProblemInstance& instance);

// "S s0 A a0 ... S sk <pad>".
std::vector<int> render_completion(const ProblemInstance& instance);

struct Dataset {
  EnvConfig config;
  EnvTables tables;
  std::vector<ProblemInstance> instances[3];  // indexed by Split

  const std::vector<ProblemInstance>& split(Split s) const {
    return instances[static_cast<int>(s)];
  }
};

// All splits, in memory.
Dataset generate_dataset(const EnvConfig& config);

// tables.json + {train,train_rl,eval}.jsonl under out_dir; returns file paths.
std::vector<std::string> write_dataset(const Dataset& dataset, const std::string& out_dir);

// Loads what write_dataset produced.
Dataset load_dataset(const std::string& dir);

}  // namespace statewalk
