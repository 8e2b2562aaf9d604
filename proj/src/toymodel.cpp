#include "worldprobe/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "worldprobe/binio.hpp"
#include "worldprobe/errors.hpp"
#include "worldprobe/rng.hpp"

namespace worldprobe::toy {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;

using Index = Eigen::Index;

struct LnCache {
  Matrix xhat;
  Vector rstd;
};

Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, LnCache& cache) {
  const Vector mean = x.rowwise().mean();
  const Matrix xc = x.colwise() - mean;
  const Vector var = xc.array().square().rowwise().mean();
  cache.rstd = (var.array() + kLnEps).rsqrt();
  cache.xhat = xc.array().colwise() * cache.rstd.array();
  return (cache.xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& g, const LnCache& c, Matrix& dg, Matrix& db) {
  dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * g.row(0).array();
  const Vector m1 = dxhat.rowwise().mean();
  const Vector m2 = (dxhat.array() * c.xhat.array()).rowwise().mean();
  return ((dxhat.colwise() - m1).array() - c.xhat.array().colwise() * m2.array()).colwise() * c.rstd.array();
}

struct BlockCache {
  Matrix x_in;
  LnCache ln1;
  Matrix ln1_out, qkv;
  std::vector<Matrix> probs;  // [sequence * n_heads + head], T x T
  Matrix attn;
  Matrix x_mid;
  LnCache ln2;
  Matrix ln2_out, pre, hidden;
};

struct Span {
  Index offset;
  Index length;
};

struct Workspace {
  std::vector<Span> spans;
  std::vector<int> tokens;
  std::vector<BlockCache> blocks;
  LnCache lnf;
  Matrix lnf_out, logits;
};

void check_intervention(const ToyModel& m, const Intervention& iv) {
  if (iv.layer < 0 || iv.layer >= m.config.n_layers)
    throw DataError("intervention layer " + std::to_string(iv.layer) + " out of range [0, " +
                    std::to_string(m.config.n_layers) + ")");
  if (iv.neuron_index < 0 || iv.neuron_index >= m.config.mlp_width)
    throw DataError("intervention neuron " + std::to_string(iv.neuron_index) + " out of range [0, " +
                    std::to_string(m.config.mlp_width) + ")");
  if (!std::isfinite(iv.value)) throw DataError("intervention value must be finite");
}

// Runs the batch, filling `ws` with everything backward needs.
void run_forward(const ToyModel& model, std::span<const Sequence> batch, Workspace& ws, const CaptureSpec* capture,
                 std::span<const Intervention> interventions, ForwardResult* result) {
  const auto& cfg = model.config;
  const auto& P = model.params;
  const Index d = cfg.d_model;
  const int H = cfg.n_heads;
  const Index dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ws.spans.clear();
  ws.tokens.clear();
  Index total = 0;
  for (const auto& seq : batch) {
    validate_sequence(model, seq);
    ws.spans.push_back({total, static_cast<Index>(seq.size())});
    total += static_cast<Index>(seq.size());
    ws.tokens.insert(ws.tokens.end(), seq.begin(), seq.end());
  }
  for (const auto& iv : interventions) check_intervention(model, iv);
  if (capture) {
    for (int l : capture->layers) {
      if (l < 0 || l >= cfg.n_layers)
        throw DataError("capture layer " + std::to_string(l) + " does not exist (model has " +
                        std::to_string(cfg.n_layers) + " layers)");
    }
    for (const auto& sp : ws.spans) {
      if (capture->token_index >= sp.length)
        throw DataError("capture token index " + std::to_string(capture->token_index) + " beyond sequence length " +
                        std::to_string(sp.length));
    }
  }

  Matrix x(total, d);
  for (const auto& sp : ws.spans) {
    for (Index t = 0; t < sp.length; ++t) {
      const Index r = sp.offset + t;
      x.row(r) = P.tok_emb.row(ws.tokens[static_cast<std::size_t>(r)]) + P.pos_emb.row(t);
    }
  }

  auto capture_rows = [&](const Matrix& src) {
    Matrix out(static_cast<Index>(ws.spans.size()), src.cols());
    for (std::size_t s = 0; s < ws.spans.size(); ++s) {
      const auto& sp = ws.spans[s];
      const Index t = capture->token_index < 0 ? sp.length - 1 : capture->token_index;
      out.row(static_cast<Index>(s)) = src.row(sp.offset + t);
    }
    return out;
  };

  ws.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& B = P.blocks[static_cast<std::size_t>(l)];
    auto& c = ws.blocks[static_cast<std::size_t>(l)];
    c.x_in = x;
    c.ln1_out = layer_norm(x, B.ln1_g, B.ln1_b, c.ln1);
    c.qkv = (c.ln1_out * B.w_qkv).rowwise() + B.b_qkv.row(0);
    c.attn.setZero(total, d);
    c.probs.resize(ws.spans.size() * static_cast<std::size_t>(H));
    for (std::size_t s = 0; s < ws.spans.size(); ++s) {
      const auto [off, T] = ws.spans[s];
      for (int h = 0; h < H; ++h) {
        const auto q = c.qkv.block(off, h * dh, T, dh);
        const auto k = c.qkv.block(off, d + h * dh, T, dh);
        const auto v = c.qkv.block(off, 2 * d + h * dh, T, dh);
        Matrix& p = c.probs[s * static_cast<std::size_t>(H) + static_cast<std::size_t>(h)];
        p.noalias() = (q * k.transpose()) * scale;
        for (Index i = 0; i < T; ++i) {
          const double mx = p.row(i).head(i + 1).maxCoeff();
          double sum = 0.0;
          for (Index j = 0; j <= i; ++j) {
            p(i, j) = std::exp(p(i, j) - mx);
            sum += p(i, j);
          }
          for (Index j = 0; j <= i; ++j) p(i, j) /= sum;
          for (Index j = i + 1; j < T; ++j) p(i, j) = 0.0;
        }
        c.attn.block(off, h * dh, T, dh).noalias() = p * v;
      }
    }
    x += (c.attn * B.w_o).rowwise() + B.b_o.row(0);
    c.x_mid = x;
    c.ln2_out = layer_norm(x, B.ln2_g, B.ln2_b, c.ln2);
    c.pre = (c.ln2_out * B.w_in).rowwise() + B.b_in.row(0);
    c.hidden = c.pre.cwiseMax(0.0);
    for (const auto& iv : interventions) {
      if (iv.layer != l) continue;
      for (const auto& sp : ws.spans) {
        const Index first = iv.scope == TokenScope::All ? 0 : sp.length - 1;
        for (Index t = first; t < sp.length; ++t) c.hidden(sp.offset + t, iv.neuron_index) = iv.effective_value();
      }
    }
    x += (c.hidden * B.w_out).rowwise() + B.b_out.row(0);

    if (capture && result) {
      for (int want : capture->layers) {
        if (want != l) continue;
        result->captures.emplace_back(l, capture_rows(capture->site == Site::MlpHidden ? c.hidden : x));
      }
    }
  }

  ws.lnf_out = layer_norm(x, P.lnf_g, P.lnf_b, ws.lnf);
  ws.logits = (ws.lnf_out * P.w_unembed).rowwise() + P.b_unembed.row(0);

  if (result) {
    result->logits.clear();
    for (const auto& sp : ws.spans) result->logits.push_back(ws.logits.middleRows(sp.offset, sp.length));
    if (capture) {
      // Keep the requested layer order.
      std::vector<std::pair<int, Matrix>> ordered;
      for (int want : capture->layers) {
        for (auto& [l, m] : result->captures)
          if (l == want) ordered.emplace_back(l, m);
      }
      result->captures = std::move(ordered);
    }
  }
}

// Log-softmax of one logits row evaluated at `target`.
double row_nll(const Matrix& logits, Index r, int target) {
  const double mx = logits.row(r).maxCoeff();
  const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
  return lse - logits(r, target);
}

void backward(const ToyModel& model, const Workspace& ws, ToyParams& g) {
  const auto& cfg = model.config;
  const auto& P = model.params;
  const Index d = cfg.d_model;
  const int H = cfg.n_heads;
  const Index dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Index count = 0;
  for (const auto& sp : ws.spans) count += std::max<Index>(sp.length - 1, 0);
  Matrix dlogits = Matrix::Zero(ws.logits.rows(), ws.logits.cols());
  if (count == 0) return;
  const double inv = 1.0 / static_cast<double>(count);
  for (const auto& sp : ws.spans) {
    for (Index t = 0; t + 1 < sp.length; ++t) {
      const Index r = sp.offset + t;
      const double mx = ws.logits.row(r).maxCoeff();
      Eigen::RowVectorXd p = (ws.logits.row(r).array() - mx).exp();
      p /= p.sum();
      p(ws.tokens[static_cast<std::size_t>(r + 1)]) -= 1.0;
      dlogits.row(r) = p * inv;
    }
  }

  g.w_unembed.noalias() += ws.lnf_out.transpose() * dlogits;
  g.b_unembed += dlogits.colwise().sum();
  Matrix dx = layer_norm_backward(dlogits * P.w_unembed.transpose(), P.lnf_g, ws.lnf, g.lnf_g, g.lnf_b);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& B = P.blocks[static_cast<std::size_t>(l)];
    auto& G = g.blocks[static_cast<std::size_t>(l)];
    const auto& c = ws.blocks[static_cast<std::size_t>(l)];

    G.w_out.noalias() += c.hidden.transpose() * dx;
    G.b_out += dx.colwise().sum();
    Matrix dpre = dx * B.w_out.transpose();
    dpre.array() *= (c.pre.array() > 0.0).cast<double>();
    G.w_in.noalias() += c.ln2_out.transpose() * dpre;
    G.b_in += dpre.colwise().sum();
    Matrix dx_mid = dx + layer_norm_backward(dpre * B.w_in.transpose(), B.ln2_g, c.ln2, G.ln2_g, G.ln2_b);

    G.w_o.noalias() += c.attn.transpose() * dx_mid;
    G.b_o += dx_mid.colwise().sum();
    const Matrix dattn = dx_mid * B.w_o.transpose();
    Matrix dqkv = Matrix::Zero(c.qkv.rows(), c.qkv.cols());
    for (std::size_t s = 0; s < ws.spans.size(); ++s) {
      const auto [off, T] = ws.spans[s];
      for (int h = 0; h < H; ++h) {
        const Matrix& p = c.probs[s * static_cast<std::size_t>(H) + static_cast<std::size_t>(h)];
        const auto q = c.qkv.block(off, h * dh, T, dh);
        const auto k = c.qkv.block(off, d + h * dh, T, dh);
        const auto v = c.qkv.block(off, 2 * d + h * dh, T, dh);
        const auto dout = dattn.block(off, h * dh, T, dh);
        const Matrix dp = dout * v.transpose();
        dqkv.block(off, 2 * d + h * dh, T, dh).noalias() += p.transpose() * dout;
        const Vector rowdot = (dp.array() * p.array()).rowwise().sum();
        const Matrix ds = (p.array() * (dp.colwise() - rowdot).array()) * scale;
        dqkv.block(off, h * dh, T, dh).noalias() += ds * k;
        dqkv.block(off, d + h * dh, T, dh).noalias() += ds.transpose() * q;
      }
    }
    G.w_qkv.noalias() += c.ln1_out.transpose() * dqkv;
    G.b_qkv += dqkv.colwise().sum();
    dx = dx_mid + layer_norm_backward(dqkv * B.w_qkv.transpose(), B.ln1_g, c.ln1, G.ln1_g, G.ln1_b);
  }

  for (const auto& sp : ws.spans) {
    for (Index t = 0; t < sp.length; ++t) {
      const Index r = sp.offset + t;
      g.tok_emb.row(ws.tokens[static_cast<std::size_t>(r)]) += dx.row(r);
      g.pos_emb.row(t) += dx.row(r);
    }
  }
}

double batch_loss(const Workspace& ws) {
  double sum = 0.0;
  Index count = 0;
  for (const auto& sp : ws.spans) {
    for (Index t = 0; t + 1 < sp.length; ++t) {
      sum += row_nll(ws.logits, sp.offset + t, ws.tokens[static_cast<std::size_t>(sp.offset + t + 1)]);
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

Matrix gaussian(Rng& rng, Index rows, Index cols, double std) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = std * rng.normal();
  return m;
}

}  // namespace

void ToyModelConfig::validate() const {
  if (vocab_size < 1) throw DataError("toy model: vocab_size must be positive");
  if (d_model < 1 || n_heads < 1) throw DataError("toy model: d_model and n_heads must be positive");
  if (d_model % n_heads != 0)
    throw DataError("toy model: d_model=" + std::to_string(d_model) + " not divisible by n_heads=" +
                    std::to_string(n_heads));
  if (n_layers < 0) throw DataError("toy model: n_layers must be >= 0");
  if (mlp_width < 1) throw DataError("toy model: mlp_width must be positive");
  if (max_seq_len < 1) throw DataError("toy model: max_seq_len must be positive");
}

std::vector<Matrix*> ToyParams::tensors() {
  std::vector<Matrix*> out{&tok_emb, &pos_emb};
  for (auto& b : blocks) {
    for (Matrix* m : {&b.ln1_g, &b.ln1_b, &b.w_qkv, &b.b_qkv, &b.w_o, &b.b_o, &b.ln2_g, &b.ln2_b, &b.w_in, &b.b_in,
                      &b.w_out, &b.b_out})
      out.push_back(m);
  }
  for (Matrix* m : {&lnf_g, &lnf_b, &w_unembed, &b_unembed}) out.push_back(m);
  return out;
}

std::vector<const Matrix*> ToyParams::tensors() const {
  auto mut = const_cast<ToyParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> ToyParams::names() const {
  std::vector<std::string> out{"tok_emb", "pos_emb"};
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    for (const char* n : {"ln1_g", "ln1_b", "w_qkv", "b_qkv", "w_o", "b_o", "ln2_g", "ln2_b", "w_in", "b_in", "w_out",
                          "b_out"})
      out.push_back(p + n);
  }
  for (const char* n : {"lnf_g", "lnf_b", "w_unembed", "b_unembed"}) out.emplace_back(n);
  return out;
}

ToyParams ToyParams::zeros_like() const {
  ToyParams z = *this;
  for (Matrix* m : z.tensors()) m->setZero();
  return z;
}

ToyModel init_model(ToyModelConfig config, std::uint64_t seed) {
  config.seed = seed;
  config.validate();
  const Index V = config.vocab_size, d = config.d_model, m = config.mlp_width;
  const double out_std = kInitStd / std::sqrt(2.0 * std::max(config.n_layers, 1));
  Rng rng(seed);
  ToyModel model;
  model.config = config;
  auto& P = model.params;
  P.tok_emb = gaussian(rng, V, d, kInitStd);
  P.pos_emb = gaussian(rng, config.max_seq_len, d, kInitStd);
  for (int l = 0; l < config.n_layers; ++l) {
    BlockParams b;
    b.ln1_g = Matrix::Ones(1, d);
    b.ln1_b = Matrix::Zero(1, d);
    b.w_qkv = gaussian(rng, d, 3 * d, kInitStd);
    b.b_qkv = Matrix::Zero(1, 3 * d);
    b.w_o = gaussian(rng, d, d, out_std);
    b.b_o = Matrix::Zero(1, d);
    b.ln2_g = Matrix::Ones(1, d);
    b.ln2_b = Matrix::Zero(1, d);
    b.w_in = gaussian(rng, d, m, kInitStd);
    b.b_in = Matrix::Zero(1, m);
    b.w_out = gaussian(rng, m, d, out_std);
    b.b_out = Matrix::Zero(1, d);
    P.blocks.push_back(std::move(b));
  }
  P.lnf_g = Matrix::Ones(1, d);
  P.lnf_b = Matrix::Zero(1, d);
  P.w_unembed = gaussian(rng, d, V, kInitStd);
  P.b_unembed = Matrix::Zero(1, V);
  return model;
}

void validate_sequence(const ToyModel& model, const Sequence& tokens) {
  if (tokens.empty()) throw DataError("empty token sequence");
  if (static_cast<int>(tokens.size()) > model.config.max_seq_len)
    throw DataError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                    std::to_string(model.config.max_seq_len));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= model.config.vocab_size)
      throw DataError("token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                      " outside vocabulary of " + std::to_string(model.config.vocab_size));
  }
}

const Matrix& ForwardResult::capture(int layer) const {
  for (const auto& [l, m] : captures)
    if (l == layer) return m;
  throw DataError("no capture recorded for layer " + std::to_string(layer));
}

ForwardResult forward(const ToyModel& model, std::span<const Sequence> batch, const CaptureSpec* capture,
                      std::span<const Intervention> interventions) {
  Workspace ws;
  ForwardResult out;
  run_forward(model, batch, ws, capture, interventions, &out);
  return out;
}

Matrix forward(const ToyModel& model, const Sequence& tokens) {
  return forward(model, std::span<const Sequence>(&tokens, 1)).logits.front();
}

double loss_and_grad(const ToyModel& model, std::span<const Sequence> batch, ToyParams* grad) {
  Workspace ws;
  run_forward(model, batch, ws, nullptr, {}, nullptr);
  const double loss = batch_loss(ws);
  if (grad) backward(model, ws, *grad);
  return loss;
}

std::vector<double> token_losses(const ToyModel& model, const Sequence& tokens,
                                 std::span<const Intervention> interventions) {
  Workspace ws;
  run_forward(model, std::span<const Sequence>(&tokens, 1), ws, nullptr, interventions, nullptr);
  std::vector<double> out;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) out.push_back(row_nll(ws.logits, static_cast<Index>(t), tokens[t + 1]));
  return out;
}

std::vector<double> train(ToyModel& model, std::span<const Sequence> corpus, const TrainConfig& cfg) {
  if (corpus.empty()) throw DataError("training corpus is empty");
  if (cfg.batch_size == 0) throw UsageError("batch size must be positive");
  for (const auto& seq : corpus) validate_sequence(model, seq);

  std::vector<double> curve;
  if (cfg.steps == 0) return curve;
  curve.reserve(cfg.steps);

  Rng rng(splitmix64(cfg.seed ^ 0x746f792d74726169ull));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  auto params = model.params.tensors();
  ToyParams grad = model.params.zeros_like();
  ToyParams m1 = grad, m2 = grad;
  auto g = grad.tensors(), a = m1.tensors(), b = m2.tensors();
  std::vector<Sequence> batch;
  Workspace ws;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    batch.clear();
    while (batch.size() < cfg.batch_size) {
      if (cursor >= order.size()) {
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      batch.push_back(corpus[order[cursor++]]);
    }
    for (Matrix* t : g) t->setZero();
    run_forward(model, batch, ws, nullptr, {}, nullptr);
    const double loss = batch_loss(ws);
    if (!std::isfinite(loss)) throw NumericalError("toy model training produced a non-finite loss at step " + std::to_string(step));
    backward(model, ws, grad);
    curve.push_back(loss);

    double clip = 1.0;
    if (cfg.grad_clip > 0.0) {
      double sq = 0.0;
      for (Matrix* t : g) sq += t->squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > cfg.grad_clip) clip = cfg.grad_clip / norm;
    }
    const double t1 = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t1);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t1);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto gi = g[i]->array() * clip;
      a[i]->array() = cfg.beta1 * a[i]->array() + (1.0 - cfg.beta1) * gi;
      b[i]->array() = cfg.beta2 * b[i]->array() + (1.0 - cfg.beta2) * gi.square();
      if (cfg.weight_decay > 0.0 && params[i]->rows() > 1)
        params[i]->array() *= (1.0 - cfg.learning_rate * cfg.weight_decay);
      params[i]->array() -= cfg.learning_rate * (a[i]->array() / bc1) / ((b[i]->array() / bc2).sqrt() + cfg.eps);
    }
  }
  return curve;
}

Matrix intervene(const ToyModel& model, const Sequence& tokens, const Intervention& intervention) {
  return forward(model, std::span<const Sequence>(&tokens, 1), nullptr, std::span<const Intervention>(&intervention, 1))
      .logits.front();
}

std::vector<AblationEntry> ablation_loss_scan(const ToyModel& model, std::span<const Sequence> corpus, int layer,
                                              int neuron_index, std::size_t top_k) {
  const Intervention zero{layer, neuron_index, InterventionMode::Zero, 0.0, TokenScope::All};
  check_intervention(model, zero);
  std::vector<AblationEntry> out;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    const auto& seq = corpus[s];
    const auto base = token_losses(model, seq);
    const auto ablated = token_losses(model, seq, std::span<const Intervention>(&zero, 1));
    for (std::size_t t = 0; t < base.size(); ++t) {
      AblationEntry e;
      e.sequence = s;
      e.position = t;
      e.context.assign(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(t + 1));
      e.true_token = seq[t + 1];
      e.base_loss = base[t];
      e.ablated_loss = ablated[t];
      e.loss_increase = ablated[t] - base[t];
      out.push_back(std::move(e));
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const AblationEntry& a, const AblationEntry& b) { return a.loss_increase > b.loss_increase; });
  if (top_k > 0 && out.size() > top_k) out.resize(top_k);
  return out;
}

ActivationMatrix extract_activations(const ToyModel& model, std::span<const Sequence> prompts, int layer,
                                     int token_index, const std::string& prompt_id, const std::string& model_id) {
  if (layer < 0 || layer >= model.config.n_layers)
    throw DataError("layer " + std::to_string(layer) + " does not exist (model has " +
                    std::to_string(model.config.n_layers) + " layers)");
  ActivationMatrix out;
  out.model_id = model_id;
  out.prompt_id = prompt_id;
  out.layer = static_cast<std::uint16_t>(layer);
  out.data.resize(static_cast<Index>(prompts.size()), model.config.d_model);
  const CaptureSpec spec{{layer}, token_index, Site::ResidualPostBlock};
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < prompts.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, prompts.size() - start);
    const auto res = forward(model, prompts.subspan(start, len), &spec);
    out.data.middleRows(static_cast<Index>(start), static_cast<Index>(len)) = res.capture(layer).cast<float>();
  }
  return out;
}

std::vector<NeuronWeights> neuron_weights(const ToyModel& model) {
  std::vector<NeuronWeights> out;
  for (int l = 0; l < model.config.n_layers; ++l) {
    const auto& b = model.params.blocks[static_cast<std::size_t>(l)];
    out.push_back({l, Polarity::Read, b.w_in.transpose()});
    out.push_back({l, Polarity::Write, b.w_out});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string encode_model(const ToyModel& model) {
  binio::Writer w;
  w.bytes("TOYM");
  w.uint<std::uint32_t>(1);
  const auto& c = model.config;
  for (int v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.mlp_width, c.max_seq_len})
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.uint<std::uint64_t>(c.seed);
  const auto tensors = model.params.tensors();
  const auto names = model.params.names();
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Matrix& m = *tensors[i];
    w.str16(names[i]);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index col = 0; col < m.cols(); ++col) w.f64(m(r, col));
  }
  return w.take();
}

ToyModel decode_model(std::string_view bytes, const std::string& source) {
  binio::Reader r(bytes, source);
  if (r.remaining() < 4 || r.bytes(4) != "TOYM") throw DataError(source + ": bad magic (expected TOYM)");
  const auto version = r.uint<std::uint32_t>();
  if (version != 1) throw DataError(source + ": unsupported TOYM version " + std::to_string(version));
  ToyModelConfig c;
  for (int* v : {&c.vocab_size, &c.d_model, &c.n_layers, &c.n_heads, &c.mlp_width, &c.max_seq_len})
    *v = static_cast<int>(r.uint<std::uint32_t>());
  c.seed = r.uint<std::uint64_t>();
  c.validate();
  ToyModel model = init_model(c, c.seed);
  auto tensors = model.params.tensors();
  const auto names = model.params.names();
  const auto count = r.uint<std::uint32_t>();
  if (count != tensors.size())
    throw DataError(source + ": expected " + std::to_string(tensors.size()) + " tensors, found " + std::to_string(count));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto name = r.str16();
    const auto rows = r.uint<std::uint32_t>();
    const auto cols = r.uint<std::uint32_t>();
    Matrix& m = *tensors[i];
    if (name != names[i] || rows != m.rows() || cols != m.cols())
      throw DataError(source + ": tensor " + std::to_string(i) + " is '" + name + "' " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", expected '" + names[i] + "' " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()));
    r.need(static_cast<std::size_t>(rows) * cols * 8);
    for (Index i2 = 0; i2 < m.rows(); ++i2)
      for (Index j = 0; j < m.cols(); ++j) m(i2, j) = r.f64();
    if (!m.allFinite()) throw DataError(source + ": non-finite values in tensor '" + name + "'");
  }
  if (r.remaining() != 0) throw DataError(source + ": trailing bytes after checkpoint");
  return model;
}

void save_model(const std::string& path, const ToyModel& model) { binio::write_file(path, encode_model(model)); }

ToyModel load_model(const std::string& path) { return decode_model(binio::read_file(path), path); }

std::string encode_corpus(std::span<const Sequence> corpus) {
  binio::Writer w;
  for (const auto& seq : corpus) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(seq.size()));
    for (int t : seq) {
      if (t < 0) throw DataError("negative token id in corpus");
      w.uint<std::uint32_t>(static_cast<std::uint32_t>(t));
    }
  }
  return w.take();
}

std::vector<Sequence> decode_corpus(std::string_view bytes, const std::string& source) {
  binio::Reader r(bytes, source);
  std::vector<Sequence> out;
  while (r.remaining() > 0) {
    const auto len = r.uint<std::uint32_t>();
    r.need(static_cast<std::size_t>(len) * 4);
    Sequence seq(len);
    for (auto& t : seq) {
      const auto v = r.uint<std::uint32_t>();
      if (v > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
        throw DataError(source + ": token id overflow");
      t = static_cast<int>(v);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void save_corpus(const std::string& path, std::span<const Sequence> corpus) {
  binio::write_file(path, encode_corpus(corpus));
}

std::vector<Sequence> load_corpus(const std::string& path) { return decode_corpus(binio::read_file(path), path); }

}  // namespace worldprobe::toy
