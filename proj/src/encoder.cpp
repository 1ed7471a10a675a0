#include "mlcc/encoder.hpp"
#include "mlcc/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mlcc {

const char* to_string(Arch arch) {
  switch (arch) {
    case Arch::kMlp2: return "mlp-2";
    case Arch::kConv4: return "conv-4";
  }
  return "mlp-2";
}

Arch parse_arch(const std::string& text) {
  if (text == "mlp-2") return Arch::kMlp2;
  if (text == "conv-4") return Arch::kConv4;
  throw Error(ErrorCode::kInvalidArgument, "unknown encoder arch '" + text + "' (expected mlp-2 or conv-4)");
}

namespace {

constexpr int kConvBlocks = 4;

using RowMajorMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Spatial {
  int channels, height, width;
  Index area() const { return Index{height} * width; }
};

std::vector<Spatial> conv_geometry(const EncoderConfig& cfg) {
  std::vector<Spatial> dims;
  Spatial s{cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]};
  for (int l = 0; l < kConvBlocks; ++l) {
    dims.push_back(s);
    s = Spatial{cfg.width, s.height / 2, s.width / 2};
  }
  dims.push_back(s);  // pooled output of the last block
  return dims;
}

}  // namespace

void EncoderConfig::validate() const {
  require(embed_dim >= 2, ErrorCode::kInvalidArgument, "embed_dim must be >= 2");
  require(width >= 1, ErrorCode::kInvalidArgument, "encoder width must be positive");
  require(!input_shape.empty(), ErrorCode::kInvalidArgument, "encoder input_shape is empty");
  for (int s : input_shape) require(s >= 1, ErrorCode::kInvalidArgument, "input_shape entries must be positive");
  if (arch == Arch::kConv4) {
    require(input_shape.size() == 3, ErrorCode::kInvalidArgument, "conv-4 needs a {C, H, W} input_shape");
    require(input_shape[1] >= 16 && input_shape[2] >= 16, ErrorCode::kInvalidArgument,
            "conv-4 needs images of at least 16x16");
  }
}

Index EncoderConfig::input_dim() const {
  Index d = 1;
  for (int s : input_shape) d *= s;
  return d;
}

Index EncoderState::num_parameters() const {
  Index n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

bool EncoderState::all_finite() const {
  return std::all_of(params.begin(), params.end(), [](const Matrix& p) { return p.allFinite(); });
}

EncoderState init_encoder(const EncoderConfig& config) {
  config.validate();
  Rng rng(config.init_seed);
  std::normal_distribution<Real> normal(0.0, 1.0);
  const auto he = [&](Index rows, Index cols, Index fan_in) {
    const Real sd = std::sqrt(2.0 / static_cast<Real>(fan_in));
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = sd * normal(rng);
    return m;
  };

  EncoderState state;
  state.config = config;
  if (config.arch == Arch::kMlp2) {
    const Index in = config.input_dim();
    state.params.push_back(he(config.width, in, in));
    state.params.push_back(Matrix::Zero(config.width, 1));
    state.params.push_back(he(config.embed_dim, config.width, config.width));
    state.params.push_back(Matrix::Zero(config.embed_dim, 1));
  } else {
    const auto dims = conv_geometry(config);
    for (int l = 0; l < kConvBlocks; ++l) {
      const Index fan_in = Index{dims[l].channels} * 9;
      state.params.push_back(he(config.width, fan_in, fan_in));
      state.params.push_back(Matrix::Zero(config.width, 1));
    }
    const Index flat = Index{dims.back().channels} * dims.back().area();
    state.params.push_back(he(config.embed_dim, flat, flat));
    state.params.push_back(Matrix::Zero(config.embed_dim, 1));
  }
  return state;
}

namespace {

Matrix im2col(const RowMajorMatrix& x, const Spatial& s) {
  Matrix col = Matrix::Zero(Index{s.channels} * 9, s.area());
  for (int c = 0; c < s.channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Index r = Index{c} * 9 + ky * 3 + kx;
        for (int y = 0; y < s.height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= s.height) continue;
          for (int xx = 0; xx < s.width; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= s.width) continue;
            col(r, Index{y} * s.width + xx) = x(c, Index{sy} * s.width + sx);
          }
        }
      }
    }
  }
  return col;
}

RowMajorMatrix col2im(const Matrix& col, const Spatial& s) {
  RowMajorMatrix x = RowMajorMatrix::Zero(s.channels, s.area());
  for (int c = 0; c < s.channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Index r = Index{c} * 9 + ky * 3 + kx;
        for (int y = 0; y < s.height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= s.height) continue;
          for (int xx = 0; xx < s.width; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= s.width) continue;
            x(c, Index{sy} * s.width + sx) += col(r, Index{y} * s.width + xx);
          }
        }
      }
    }
  }
  return x;
}

// 2x2 max pool, stride 2, floor; argmax holds the flat source index.
RowMajorMatrix max_pool(const RowMajorMatrix& x, const Spatial& in, Eigen::VectorXi& argmax) {
  const int oh = in.height / 2;
  const int ow = in.width / 2;
  RowMajorMatrix out(x.rows(), Index{oh} * ow);
  argmax.resize(out.size());
  for (Index c = 0; c < x.rows(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        Index best = Index{2 * y} * in.width + 2 * xx;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const Index idx = Index{2 * y + dy} * in.width + 2 * xx + dx;
            if (x(c, idx) > x(c, best)) best = idx;
          }
        }
        const Index o = Index{y} * ow + xx;
        out(c, o) = x(c, best);
        argmax(c * out.cols() + o) = static_cast<int>(best);
      }
    }
  }
  return out;
}

Matrix encode_mlp(const EncoderState& state, const Matrix& batch, EncodeTape* tape) {
  const auto& p = state.params;
  Matrix pre = batch * p[0].transpose();
  pre.rowwise() += p[1].col(0).transpose();
  Matrix hidden = pre.cwiseMax(0.0);
  Matrix out = hidden * p[2].transpose();
  out.rowwise() += p[3].col(0).transpose();
  if (tape) {
    tape->input = batch;
    tape->activations = {std::move(pre), std::move(hidden)};
  }
  return out;
}

ParamSet backward_mlp(const EncoderState& state, const EncodeTape& tape, const Matrix& grad) {
  const auto& p = state.params;
  const Matrix& pre = tape.activations[0];
  const Matrix& hidden = tape.activations[1];
  ParamSet g(4);
  g[2] = grad.transpose() * hidden;
  g[3] = grad.colwise().sum().transpose();
  const Matrix grad_hidden = (grad * p[2]).cwiseProduct((pre.array() > 0).cast<Real>().matrix());
  g[0] = grad_hidden.transpose() * tape.input;
  g[1] = grad_hidden.colwise().sum().transpose();
  return g;
}

// Tape layout for conv-4: activations[(l * B + s) * 2] is the block-l input
// of sample s (C x HW, row-major), [.. + 1] its pre-activation; the final
// entry is the B x flat feature matrix.
Matrix encode_conv(const EncoderState& state, const Matrix& batch, EncodeTape* tape) {
  const auto& p = state.params;
  const auto dims = conv_geometry(state.config);
  const Index b = batch.rows();
  const Index flat = Index{dims.back().channels} * dims.back().area();
  Matrix features(b, flat);
  if (tape) {
    tape->input = batch;
    tape->activations.assign(static_cast<std::size_t>(kConvBlocks * b * 2 + 1), Matrix());
    tape->pool_argmax.assign(kConvBlocks, std::vector<Eigen::VectorXi>(static_cast<std::size_t>(b)));
  }
  for (Index s = 0; s < b; ++s) {
    const RowVectorX<Real> row = batch.row(s);
    RowMajorMatrix x = Eigen::Map<const RowMajorMatrix>(row.data(), dims[0].channels, dims[0].area());
    for (int l = 0; l < kConvBlocks; ++l) {
      const Matrix col = im2col(x, dims[l]);
      Matrix pre = p[2 * l] * col;
      pre.colwise() += p[2 * l + 1].col(0);
      const RowMajorMatrix act = pre.cwiseMax(0.0);
      Eigen::VectorXi argmax;
      RowMajorMatrix pooled = max_pool(act, dims[l], argmax);
      if (tape) {
        const std::size_t base = static_cast<std::size_t>((l * b + s) * 2);
        tape->activations[base] = x;
        tape->activations[base + 1] = std::move(pre);
        tape->pool_argmax[l][s] = std::move(argmax);
      }
      x = std::move(pooled);
    }
    features.row(s) = Eigen::Map<const RowVectorX<Real>>(x.data(), flat);
  }
  Matrix out = features * p[2 * kConvBlocks].transpose();
  out.rowwise() += p[2 * kConvBlocks + 1].col(0).transpose();
  if (tape) tape->activations.back() = std::move(features);
  return out;
}

ParamSet backward_conv(const EncoderState& state, const EncodeTape& tape, const Matrix& grad) {
  const auto& p = state.params;
  const auto dims = conv_geometry(state.config);
  const Index b = tape.input.rows();
  const Matrix& features = tape.activations.back();
  ParamSet g = zeros_like(p);
  g[2 * kConvBlocks] = grad.transpose() * features;
  g[2 * kConvBlocks + 1] = grad.colwise().sum().transpose();
  const Matrix grad_features = grad * p[2 * kConvBlocks];

  for (Index s = 0; s < b; ++s) {
    const RowVectorX<Real> gf = grad_features.row(s);
    RowMajorMatrix grad_out = Eigen::Map<const RowMajorMatrix>(gf.data(), dims.back().channels, dims.back().area());
    for (int l = kConvBlocks - 1; l >= 0; --l) {
      const std::size_t base = static_cast<std::size_t>((l * b + s) * 2);
      const RowMajorMatrix x = tape.activations[base];
      const Matrix& pre = tape.activations[base + 1];
      const Eigen::VectorXi& argmax = tape.pool_argmax[l][s];

      Matrix grad_pre = Matrix::Zero(pre.rows(), pre.cols());
      for (Index c = 0; c < grad_out.rows(); ++c) {
        for (Index o = 0; o < grad_out.cols(); ++o) {
          const Index src = argmax(c * grad_out.cols() + o);
          if (pre(c, src) > 0) grad_pre(c, src) += grad_out(c, o);
        }
      }
      const Matrix col = im2col(x, dims[l]);
      g[2 * l] += grad_pre * col.transpose();
      g[2 * l + 1] += grad_pre.rowwise().sum();
      if (l > 0) grad_out = col2im(p[2 * l].transpose() * grad_pre, dims[l]);
    }
  }
  return g;
}

}  // namespace

Matrix encode(const EncoderState& state, const Matrix& batch, EncodeTape* tape) {
  require(batch.cols() == state.config.input_dim(), ErrorCode::kShapeMismatch,
          "batch width " + std::to_string(batch.cols()) + " does not match encoder input " +
              std::to_string(state.config.input_dim()));
  return state.config.arch == Arch::kMlp2 ? encode_mlp(state, batch, tape) : encode_conv(state, batch, tape);
}

ParamSet encode_backward(const EncoderState& state, const EncodeTape& tape, const Matrix& grad_embeddings) {
  require(grad_embeddings.rows() == tape.input.rows() && grad_embeddings.cols() == state.config.embed_dim,
          ErrorCode::kShapeMismatch, "embedding gradient shape does not match the recorded forward pass");
  return state.config.arch == Arch::kMlp2 ? backward_mlp(state, tape, grad_embeddings)
                                          : backward_conv(state, tape, grad_embeddings);
}

bool same_linear_region(const EncoderState& state, const EncodeTape& a, const EncodeTape& b) {
  if (a.activations.size() != b.activations.size() || a.pool_argmax != b.pool_argmax) return false;
  const auto same_signs = [](const Matrix& x, const Matrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && ((x.array() > 0) == (y.array() > 0)).all();
  };
  if (state.config.arch == Arch::kMlp2) return same_signs(a.activations[0], b.activations[0]);
  for (std::size_t i = 1; i + 1 < a.activations.size(); i += 2)
    if (!same_signs(a.activations[i], b.activations[i])) return false;
  return true;
}

ParamSet zeros_like(const ParamSet& params) {
  ParamSet z;
  z.reserve(params.size());
  for (const auto& p : params) z.push_back(Matrix::Zero(p.rows(), p.cols()));
  return z;
}

void accumulate(ParamSet& into, const ParamSet& grad, Real scale) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += scale * grad[i];
}

void SgdMomentum::step(ParamSet& params, const ParamSet& grads) {
  if (velocity_.empty()) velocity_ = zeros_like(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity_[i] = cfg_.momentum * velocity_[i] + grads[i] + cfg_.weight_decay * params[i];
    params[i] -= cfg_.lr * velocity_[i];
  }
}

EncoderState pretrain(const EncoderState& init, const DatasetSplit& base_split, const PretrainConfig& cfg, Rng& rng,
                      std::vector<PretrainEpoch>* history) {
  require(base_split.size() > 0, ErrorCode::kInvalidArgument, "pre-training split is empty");
  require(cfg.batch_size >= 1 && cfg.epochs >= 0, ErrorCode::kInvalidArgument, "bad pre-training schedule");
  EncoderState state = init;
  if (cfg.epochs == 0) return state;

  const int classes = base_split.num_classes;
  const Index d = state.config.embed_dim;
  std::normal_distribution<Real> normal(0.0, 1.0);
  ParamSet head{Matrix(classes, d), Matrix::Zero(classes, 1)};
  for (Index i = 0; i < head[0].size(); ++i) head[0].data()[i] = normal(rng) / std::sqrt(static_cast<Real>(d));

  SgdMomentum opt({cfg.lr, cfg.momentum, cfg.weight_decay});
  SgdMomentum head_opt({cfg.lr, cfg.momentum, cfg.weight_decay});
  std::vector<Index> order(static_cast<std::size_t>(base_split.size()));
  std::iota(order.begin(), order.end(), Index{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Real loss_sum = 0;
    Index correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const Index bs = static_cast<Index>(end - start);
      Matrix x(bs, base_split.sample_dim());
      std::vector<int> y(static_cast<std::size_t>(bs));
      for (Index i = 0; i < bs; ++i) {
        x.row(i) = base_split.samples.row(order[start + i]);
        y[i] = base_split.labels[order[start + i]];
      }

      EncodeTape tape;
      const Matrix z = encode(state, x, &tape);
      Matrix logits = z * head[0].transpose();
      logits.rowwise() += head[1].col(0).transpose();

      Matrix grad_logits(bs, classes);
      Real loss = 0;
      for (Index i = 0; i < bs; ++i) {
        const Real mx = logits.row(i).maxCoeff();
        const RowVectorX<Real> e = (logits.row(i).array() - mx).exp();
        const Real sum = e.sum();
        loss += mx + std::log(sum) - logits(i, y[i]);
        grad_logits.row(i) = e / sum;
        Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        if (arg == y[i]) ++correct;
        grad_logits(i, y[i]) -= 1;
      }
      require(std::isfinite(loss), ErrorCode::kDivergence,
              "pre-training loss became non-finite at epoch " + std::to_string(epoch));
      loss_sum += loss;
      grad_logits /= static_cast<Real>(bs);

      ParamSet head_grad{grad_logits.transpose() * z, grad_logits.colwise().sum().transpose()};
      const ParamSet enc_grad = encode_backward(state, tape, grad_logits * head[0]);
      opt.step(state.params, enc_grad);
      head_opt.step(head, head_grad);
    }
    require(state.all_finite(), ErrorCode::kDivergence, "encoder parameters became non-finite");
    if (history) {
      const Real n = static_cast<Real>(order.size());
      history->push_back({epoch, loss_sum / n, static_cast<Real>(correct) / n});
    }
  }
  return state;
}

void save_encoder(const EncoderState& state, const std::filesystem::path& path) {
  io::Json header{{"config", io::to_json(state.config)}, {"step", state.step}};
  std::vector<const Matrix*> arrays;
  for (const auto& p : state.params) arrays.push_back(&p);
  io::write_blob(path, "MLCC-ENCODER", header, arrays);
}

EncoderState load_encoder(const std::filesystem::path& path) {
  io::Blob blob = io::read_blob(path, "MLCC-ENCODER");
  EncoderState state;
  state.config = io::encoder_config_from_json(blob.header.at("config"));
  state.step = blob.header.at("step").get<std::uint64_t>();
  state.params = std::move(blob.arrays);
  const EncoderState fresh = init_encoder(state.config);
  require(fresh.params.size() == state.params.size(), ErrorCode::kIo, path.string() + ": wrong parameter count");
  for (std::size_t i = 0; i < state.params.size(); ++i) {
    require(fresh.params[i].rows() == state.params[i].rows() && fresh.params[i].cols() == state.params[i].cols(),
            ErrorCode::kIo, path.string() + ": parameter " + std::to_string(i) + " has the wrong shape");
  }
  return state;
}

EncoderState load_encoder(const std::filesystem::path& path, const EncoderConfig& expected) {
  EncoderState state = load_encoder(path);
  require(state.config == expected, ErrorCode::kConfigMismatch,
          path.string() + " was written for a different encoder config: " + io::to_json(state.config).dump());
  return state;
}

}  // namespace mlcc
