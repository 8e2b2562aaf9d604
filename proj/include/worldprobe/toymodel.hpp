#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "worldprobe/dataset.hpp"
#include "worldprobe/neuronscan.hpp"
#include "worldprobe/types.hpp"

namespace worldprobe::toy {

using Sequence = std::vector<int>;

struct ToyModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int mlp_width = 512;
  int max_seq_len = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

// Vectors (biases, norm gains) are stored as 1 x n matrices so every
// parameter can be handled uniformly.
struct BlockParams {
  Matrix ln1_g, ln1_b;
  Matrix w_qkv, b_qkv;  // d x 3d
  Matrix w_o, b_o;      // d x d
  Matrix ln2_g, ln2_b;
  Matrix w_in, b_in;    // d x mlp_width; column j is neuron j's read vector
  Matrix w_out, b_out;  // mlp_width x d; row j is neuron j's write vector
};

struct ToyParams {
  Matrix tok_emb;  // vocab x d
  Matrix pos_emb;  // max_seq_len x d
  std::vector<BlockParams> blocks;
  Matrix lnf_g, lnf_b;
  Matrix w_unembed, b_unembed;  // d x vocab

  // Declaration order; used by the optimizer and the checkpoint format.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::vector<std::string> names() const;

  ToyParams zeros_like() const;
};

// Pre-norm decoder-only transformer: learned token + position embeddings,
// causal multi-head attention, ReLU MLP, final norm, untied unembedding.
struct ToyModel {
  ToyModelConfig config;
  ToyParams params;
};

ToyModel init_model(ToyModelConfig config, std::uint64_t seed);

enum class Site { ResidualPostBlock, MlpHidden };

// token_index < 0 means the last token of each sequence.
struct CaptureSpec {
  std::vector<int> layers;
  int token_index = -1;
  Site site = Site::ResidualPostBlock;
};

enum class InterventionMode { Pin, Zero };
enum class TokenScope { All, Last };

// Overrides the post-ReLU activation of one MLP hidden unit.
struct Intervention {
  int layer = 0;
  int neuron_index = 0;
  InterventionMode mode = InterventionMode::Pin;
  double value = 0.0;
  TokenScope scope = TokenScope::All;

  double effective_value() const { return mode == InterventionMode::Zero ? 0.0 : value; }
};

struct ForwardResult {
  std::vector<Matrix> logits;  // per sequence, T x vocab
  // layer -> (num sequences x width), in `CaptureSpec::layers` order
  std::vector<std::pair<int, Matrix>> captures;

  const Matrix& capture(int layer) const;
};

ForwardResult forward(const ToyModel& model, std::span<const Sequence> batch, const CaptureSpec* capture = nullptr,
                      std::span<const Intervention> interventions = {});
Matrix forward(const ToyModel& model, const Sequence& tokens);

// Mean next-token cross-entropy over every position that has a successor.
// When `grad` is non-null it receives d(loss)/d(params).
double loss_and_grad(const ToyModel& model, std::span<const Sequence> batch, ToyParams* grad);

// Per-position next-token losses (length T-1) under optional interventions.
std::vector<double> token_losses(const ToyModel& model, const Sequence& tokens,
                                 std::span<const Intervention> interventions = {});

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double grad_clip = 1.0;     // global norm; 0 disables
  std::uint64_t seed = 0;
};

// Adam on next-token cross-entropy; returns the per-step batch loss.
std::vector<double> train(ToyModel& model, std::span<const Sequence> corpus, const TrainConfig& config);

Matrix intervene(const ToyModel& model, const Sequence& tokens, const Intervention& intervention);

struct AblationEntry {
  std::size_t sequence = 0;
  std::size_t position = 0;  // index of the context's last token
  Sequence context;          // tokens[0..position]
  int true_token = 0;        // tokens[position + 1]
  double base_loss = 0.0;
  double ablated_loss = 0.0;
  double loss_increase = 0.0;
};

// Zero-ablates exactly one neuron; ranks every predicted token by loss
// increase (descending, ties by sequence then position). top_k == 0 keeps all.
std::vector<AblationEntry> ablation_loss_scan(const ToyModel& model, std::span<const Sequence> corpus, int layer,
                                              int neuron_index, std::size_t top_k = 0);

ActivationMatrix extract_activations(const ToyModel& model, std::span<const Sequence> prompts, int layer,
                                     int token_index = -1, const std::string& prompt_id = "empty",
                                     const std::string& model_id = "toy");

// Read rows (w_in columns) and write rows (w_out rows) for every layer.
std::vector<NeuronWeights> neuron_weights(const ToyModel& model);

void validate_sequence(const ToyModel& model, const Sequence& tokens);

// TOYM checkpoint: "TOYM", u32 version, config header, then each tensor as
// (u16 name, u32 rows, u32 cols, f64 row-major data) in declaration order.
std::string encode_model(const ToyModel& model);
ToyModel decode_model(std::string_view bytes, const std::string& source = "<buffer>");
void save_model(const std::string& path, const ToyModel& model);
ToyModel load_model(const std::string& path);

// Corpus file: per sequence a u32 length followed by that many u32 token ids.
std::string encode_corpus(std::span<const Sequence> corpus);
std::vector<Sequence> decode_corpus(std::string_view bytes, const std::string& source = "<buffer>");
void save_corpus(const std::string& path, std::span<const Sequence> corpus);
std::vector<Sequence> load_corpus(const std::string& path);

}  // namespace worldprobe::toy
