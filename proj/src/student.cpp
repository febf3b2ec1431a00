#include "mwpkd/student.hpp"

#include <cmath>
#include <cstring>
#include <thread>

#include "mwpkd/binary_io.hpp"
#include "mwpkd/error.hpp"
#include "mwpkd/rng.hpp"

namespace mwpkd {

void StudentConfig::validate() const {
  if (vocab_size < 1) fail(ErrorKind::Config, "vocab_size must be positive");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) fail(ErrorKind::Config, "dims must be positive");
  if (max_len < 1) fail(ErrorKind::Config, "max_len must be >= 1");
  if (d_model % n_heads != 0) {
    fail(ErrorKind::Config, "d_model=" + std::to_string(d_model) + " is not divisible by n_heads=" +
                                std::to_string(n_heads));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail(ErrorKind::Config, "dropout_rate must be in [0, 1)");
}

Eigen::MatrixXd sinusoidal_encoding(int max_len, int d_model) {
  Eigen::MatrixXd pe(max_len, d_model);
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / d_model);
      pe(pos, i) = i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return pe;
}

namespace {

Eigen::MatrixXd xavier(Rng& rng, int fan_in, int fan_out) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Eigen::MatrixXd m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

StudentParams init_student(const StudentConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  StudentParams p;
  p.cfg = cfg;
  const int d = cfg.d_model;
  p.token_embedding = xavier(rng, static_cast<int>(cfg.vocab_size), d);
  p.positional_encoding = sinusoidal_encoding(cfg.max_len, d);
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& l : p.layers) {
    l.W_Q = xavier(rng, d, d);
    l.W_K = xavier(rng, d, d);
    l.W_V = xavier(rng, d, d);
    l.W_O = xavier(rng, d, d);
    l.W_1 = xavier(rng, d, cfg.d_ff);
    l.b_1 = Eigen::MatrixXd::Zero(1, cfg.d_ff);
    l.W_2 = xavier(rng, cfg.d_ff, d);
    l.b_2 = Eigen::MatrixXd::Zero(1, d);
    l.ln1_gamma = Eigen::MatrixXd::Ones(1, d);
    l.ln1_beta = Eigen::MatrixXd::Zero(1, d);
    l.ln2_gamma = Eigen::MatrixXd::Ones(1, d);
    l.ln2_beta = Eigen::MatrixXd::Zero(1, d);
  }
  return p;
}

GradientSet zero_gradients(const StudentParams& params) {
  GradientSet g;
  g.cfg = params.cfg;
  g.layers.resize(params.layers.size());
  // Walk both structures in lockstep.
  std::vector<const Eigen::MatrixXd*> src;
  params.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& t) { src.push_back(&t); });
  std::size_t i = 0;
  g.for_each_tensor([&](const std::string&, Eigen::MatrixXd& t) {
    t = Eigen::MatrixXd::Zero(src[i]->rows(), src[i]->cols());
    ++i;
  });
  return g;
}

std::int64_t trainable_parameter_count(const StudentParams& params) {
  std::int64_t n = 0;
  params.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& t) { n += t.size(); });
  return n;
}

std::int64_t closed_form_parameter_count(const StudentConfig& cfg) {
  const std::int64_t d = cfg.d_model;
  const std::int64_t ff = cfg.d_ff;
  const std::int64_t per_layer = 4 * d * d + 2 * d * ff + (ff + d) + 4 * d;
  return cfg.vocab_size * d + cfg.n_layers * per_layer;
}

std::uint64_t param_checksum(const StudentParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  params.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& t) {
    h = fnv1a64(std::as_bytes(std::span<const double>(t.data(), static_cast<std::size_t>(t.size()))), h);
  });
  return h;
}

template <typename T>
Mat<T> scaled_dot_attention(const Mat<T>& Q, const Mat<T>& K, const Mat<T>& V) {
  if (Q.rows() != K.rows() || K.rows() != V.rows() || Q.cols() != K.cols() || Q.cols() < 1) {
    fail(ErrorKind::Shape, "attention operands disagree in shape");
  }
  const T scale = T(1) / std::sqrt(static_cast<T>(Q.cols()));
  Mat<T> S = Q * K.transpose() * scale;
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    S.row(i).array() -= S.row(i).maxCoeff();
    S.row(i) = S.row(i).array().exp().matrix();
    S.row(i) /= S.row(i).sum();
  }
  return S * V;
}

template <typename T>
Mat<T> multi_head_attention(const Mat<T>& X, const LayerParams& layer, int n_heads) {
  const auto d = layer.W_Q.rows();
  if (X.cols() != d || n_heads < 1 || d % n_heads != 0) fail(ErrorKind::Shape, "attention input shape mismatch");
  const Mat<T> Q = X * layer.W_Q.cast<T>();
  const Mat<T> K = X * layer.W_K.cast<T>();
  const Mat<T> V = X * layer.W_V.cast<T>();
  const auto dk = d / n_heads;
  Mat<T> O(X.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    O.middleCols(h * dk, dk) = scaled_dot_attention<T>(Q.middleCols(h * dk, dk), K.middleCols(h * dk, dk),
                                                       V.middleCols(h * dk, dk));
  }
  return O * layer.W_O.cast<T>();
}

template <typename T>
Mat<T> ffn(const Mat<T>& X, const LayerParams& layer) {
  if (X.cols() != layer.W_1.rows()) fail(ErrorKind::Shape, "ffn input shape mismatch");
  Mat<T> Z = X * layer.W_1.cast<T>();
  Z.rowwise() += layer.b_1.cast<T>().row(0);
  Mat<T> out = Z.cwiseMax(T(0)) * layer.W_2.cast<T>();
  out.rowwise() += layer.b_2.cast<T>().row(0);
  return out;
}

template <typename T>
Mat<T> layer_norm(const Mat<T>& X, const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& beta) {
  Mat<T> out(X.rows(), X.cols());
  const auto g = gamma.cast<T>();
  const auto b = beta.cast<T>();
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const T mu = X.row(i).mean();
    const T var = (X.row(i).array() - mu).square().mean();
    const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    out.row(i) = ((X.row(i).array() - mu) * inv * g.row(0).array() + b.row(0).array()).matrix();
  }
  return out;
}

namespace {

void check_input(const StudentParams& params, std::span<const std::int64_t> ids) {
  if (ids.empty()) fail(ErrorKind::Length, "empty token sequence");
  if (static_cast<int>(ids.size()) > params.cfg.max_len) {
    fail(ErrorKind::Length, "sequence length " + std::to_string(ids.size()) + " exceeds max_len " +
                                std::to_string(params.cfg.max_len));
  }
  for (auto id : ids) {
    if (id < 0 || id >= params.cfg.vocab_size) {
      fail(ErrorKind::TokenRange, "token id " + std::to_string(id) + " outside [0, " +
                                      std::to_string(params.cfg.vocab_size) + ")");
    }
  }
}

template <typename T>
Mat<T> embed(const StudentParams& params, std::span<const std::int64_t> ids) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  Mat<T> X(n, params.cfg.d_model);
  for (Eigen::Index i = 0; i < n; ++i) {
    X.row(i) = (params.token_embedding.row(ids[i]) + params.positional_encoding.row(i)).cast<T>();
  }
  return X;
}

}  // namespace

template <typename T>
Mat<T> student_forward(const StudentParams& params, std::span<const std::int64_t> token_ids) {
  check_input(params, token_ids);
  Mat<T> X = embed<T>(params, token_ids);
  for (const auto& layer : params.layers) {
    X = layer_norm<T>(X + multi_head_attention<T>(X, layer, params.cfg.n_heads), layer.ln1_gamma, layer.ln1_beta);
    X = layer_norm<T>(X + ffn<T>(X, layer), layer.ln2_gamma, layer.ln2_beta);
  }
  return X;
}

template Mat<float> scaled_dot_attention(const Mat<float>&, const Mat<float>&, const Mat<float>&);
template Mat<double> scaled_dot_attention(const Mat<double>&, const Mat<double>&, const Mat<double>&);
template Mat<float> multi_head_attention(const Mat<float>&, const LayerParams&, int);
template Mat<double> multi_head_attention(const Mat<double>&, const LayerParams&, int);
template Mat<float> ffn(const Mat<float>&, const LayerParams&);
template Mat<double> ffn(const Mat<double>&, const LayerParams&);
template Mat<float> layer_norm(const Mat<float>&, const Eigen::MatrixXd&, const Eigen::MatrixXd&);
template Mat<double> layer_norm(const Mat<double>&, const Eigen::MatrixXd&, const Eigen::MatrixXd&);
template Mat<float> student_forward(const StudentParams&, std::span<const std::int64_t>);
template Mat<double> student_forward(const StudentParams&, std::span<const std::int64_t>);

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct NormCache {
  MatrixXd xhat;
  VectorXd inv_std;
};

struct LayerCache {
  MatrixXd X, Q, K, V, O;
  std::vector<MatrixXd> P;
  MatrixXd drop1;  // scaled keep mask, empty when dropout is off
  NormCache ln1;
  MatrixXd H1, Z;
  MatrixXd drop2;
  NormCache ln2;
};

MatrixXd norm_forward(const MatrixXd& R, const MatrixXd& gamma, const MatrixXd& beta, NormCache& c) {
  const auto n = R.rows();
  c.xhat.resize(n, R.cols());
  c.inv_std.resize(n);
  MatrixXd out(n, R.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = R.row(i).mean();
    const double var = (R.row(i).array() - mu).square().mean();
    c.inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    c.xhat.row(i) = (R.row(i).array() - mu) * c.inv_std(i);
    out.row(i) = (c.xhat.row(i).array() * gamma.row(0).array() + beta.row(0).array()).matrix();
  }
  return out;
}

MatrixXd norm_backward(const MatrixXd& dY, const MatrixXd& gamma, const NormCache& c, MatrixXd& dgamma,
                       MatrixXd& dbeta) {
  dgamma.row(0) += (dY.array() * c.xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dY.colwise().sum();
  MatrixXd dR(dY.rows(), dY.cols());
  for (Eigen::Index i = 0; i < dY.rows(); ++i) {
    const Eigen::ArrayXXd dxhat = dY.row(i).array() * gamma.row(0).array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * c.xhat.row(i).array()).mean();
    dR.row(i) = (c.inv_std(i) * (dxhat - m1 - c.xhat.row(i).array() * m2)).matrix();
  }
  return dR;
}

MatrixXd dropout_mask(Rng* rng, double rate, Eigen::Index rows, Eigen::Index cols) {
  if (rng == nullptr || rate <= 0.0) return {};
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng->uniform() < rate ? 0.0 : 1.0 / (1.0 - rate);
  return m;
}

MatrixXd forward_cached(const StudentParams& params, std::span<const std::int64_t> ids,
                        std::vector<LayerCache>& caches, Rng* rng) {
  const auto& cfg = params.cfg;
  MatrixXd X = embed<double>(params, ids);
  caches.resize(params.layers.size());
  const int dk = cfg.d_model / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& p = params.layers[l];
    auto& c = caches[l];
    c.X = X;
    c.Q = X * p.W_Q;
    c.K = X * p.W_K;
    c.V = X * p.W_V;
    c.O.resize(X.rows(), cfg.d_model);
    c.P.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      MatrixXd S = c.Q.middleCols(h * dk, dk) * c.K.middleCols(h * dk, dk).transpose() * scale;
      for (Eigen::Index i = 0; i < S.rows(); ++i) {
        S.row(i).array() -= S.row(i).maxCoeff();
        S.row(i) = S.row(i).array().exp().matrix();
        S.row(i) /= S.row(i).sum();
      }
      c.O.middleCols(h * dk, dk) = S * c.V.middleCols(h * dk, dk);
      c.P[static_cast<std::size_t>(h)] = std::move(S);
    }
    MatrixXd A = c.O * p.W_O;
    c.drop1 = dropout_mask(rng, cfg.dropout_rate, A.rows(), A.cols());
    if (c.drop1.size() > 0) A.array() *= c.drop1.array();
    c.H1 = norm_forward(X + A, p.ln1_gamma, p.ln1_beta, c.ln1);
    c.Z = c.H1 * p.W_1;
    c.Z.rowwise() += p.b_1.row(0);
    MatrixXd F = c.Z.cwiseMax(0.0) * p.W_2;
    F.rowwise() += p.b_2.row(0);
    c.drop2 = dropout_mask(rng, cfg.dropout_rate, F.rows(), F.cols());
    if (c.drop2.size() > 0) F.array() *= c.drop2.array();
    X = norm_forward(c.H1 + F, p.ln2_gamma, p.ln2_beta, c.ln2);
  }
  return X;
}

void backward_cached(const StudentParams& params, std::span<const std::int64_t> ids,
                     const std::vector<LayerCache>& caches, MatrixXd dX, GradientSet& g) {
  const auto& cfg = params.cfg;
  const int dk = cfg.d_model / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& p = params.layers[l];
    const auto& c = caches[l];
    auto& gl = g.layers[l];

    const MatrixXd dR2 = norm_backward(dX, p.ln2_gamma, c.ln2, gl.ln2_gamma, gl.ln2_beta);
    MatrixXd dF = dR2;
    if (c.drop2.size() > 0) dF.array() *= c.drop2.array();
    const MatrixXd U = c.Z.cwiseMax(0.0);
    gl.W_2.noalias() += U.transpose() * dF;
    gl.b_2.row(0) += dF.colwise().sum();
    MatrixXd dZ = dF * p.W_2.transpose();
    dZ.array() *= (c.Z.array() > 0.0).cast<double>();
    gl.W_1.noalias() += c.H1.transpose() * dZ;
    gl.b_1.row(0) += dZ.colwise().sum();
    const MatrixXd dH1 = dR2 + dZ * p.W_1.transpose();

    const MatrixXd dR1 = norm_backward(dH1, p.ln1_gamma, c.ln1, gl.ln1_gamma, gl.ln1_beta);
    MatrixXd dA = dR1;
    if (c.drop1.size() > 0) dA.array() *= c.drop1.array();
    gl.W_O.noalias() += c.O.transpose() * dA;
    const MatrixXd dO = dA * p.W_O.transpose();
    MatrixXd dQ(dO.rows(), dO.cols()), dK(dO.rows(), dO.cols()), dV(dO.rows(), dO.cols());
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto& P = c.P[static_cast<std::size_t>(h)];
      const MatrixXd dOh = dO.middleCols(h * dk, dk);
      const MatrixXd dP = dOh * c.V.middleCols(h * dk, dk).transpose();
      dV.middleCols(h * dk, dk) = P.transpose() * dOh;
      MatrixXd dS = P.array() * (dP.array().colwise() - (dP.array() * P.array()).rowwise().sum());
      dS *= scale;
      dQ.middleCols(h * dk, dk) = dS * c.K.middleCols(h * dk, dk);
      dK.middleCols(h * dk, dk) = dS.transpose() * c.Q.middleCols(h * dk, dk);
    }
    gl.W_Q.noalias() += c.X.transpose() * dQ;
    gl.W_K.noalias() += c.X.transpose() * dK;
    gl.W_V.noalias() += c.X.transpose() * dV;
    dX = dR1 + dQ * p.W_Q.transpose() + dK * p.W_K.transpose() + dV * p.W_V.transpose();
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    g.token_embedding.row(ids[i]) += dX.row(static_cast<Eigen::Index>(i));
  }
}

void add_into(GradientSet& acc, const GradientSet& g) {
  std::vector<const MatrixXd*> src;
  g.for_each_tensor([&](const std::string&, const MatrixXd& t) { src.push_back(&t); });
  std::size_t i = 0;
  acc.for_each_tensor([&](const std::string&, MatrixXd& t) { t += *src[i++]; });
}

void check_gradients_finite(const GradientSet& g) {
  g.for_each_tensor([&](const std::string& name, const MatrixXd& t) {
    if (!t.allFinite()) fail(ErrorKind::NonFinite, "gradient of " + name + " is not finite");
  });
}

}  // namespace

BackwardResult student_backward(const StudentParams& params,
                                const std::vector<std::vector<std::int64_t>>& batch, const LossHead& head,
                                const BackwardOptions& opts) {
  for (const auto& ids : batch) check_input(params, ids);
  const int workers = std::max(1, std::min<int>(opts.threads, static_cast<int>(batch.size())));
  // Dropout masks come from a shared stream, so a dropout run stays serial.
  const bool serial = workers == 1 || (opts.dropout_rng != nullptr && params.cfg.dropout_rate > 0.0);
  const int n_chunks = serial ? 1 : workers;

  std::vector<GradientSet> grads;
  grads.reserve(static_cast<std::size_t>(n_chunks));
  for (int w = 0; w < n_chunks; ++w) grads.push_back(zero_gradients(params));
  std::vector<double> losses(static_cast<std::size_t>(n_chunks), 0.0);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chunks));

  auto run = [&](int w) {
    try {
      const std::size_t lo = batch.size() * static_cast<std::size_t>(w) / static_cast<std::size_t>(n_chunks);
      const std::size_t hi = batch.size() * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(n_chunks);
      std::vector<LayerCache> caches;
      for (std::size_t b = lo; b < hi; ++b) {
        const MatrixXd hidden = forward_cached(params, batch[b], caches, serial ? opts.dropout_rng : nullptr);
        MatrixXd d_hidden = MatrixXd::Zero(hidden.rows(), hidden.cols());
        losses[static_cast<std::size_t>(w)] += head(b, hidden, d_hidden);
        if (d_hidden.rows() != hidden.rows() || d_hidden.cols() != hidden.cols()) {
          fail(ErrorKind::Shape, "loss head returned a gradient of the wrong shape");
        }
        backward_cached(params, batch[b], caches, d_hidden, grads[static_cast<std::size_t>(w)]);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (n_chunks == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_chunks; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  BackwardResult out;
  out.grads = std::move(grads[0]);
  out.loss = losses[0];
  for (int w = 1; w < n_chunks; ++w) {
    add_into(out.grads, grads[static_cast<std::size_t>(w)]);
    out.loss += losses[static_cast<std::size_t>(w)];
  }
  if (!std::isfinite(out.loss)) fail(ErrorKind::NonFinite, "loss is not finite");
  check_gradients_finite(out.grads);
  return out;
}

std::string encode_student(const StudentParams& params) {
  ByteWriter w;
  w.bytes("STU1");
  w.u32(1);
  const auto& c = params.cfg;
  w.u32(static_cast<std::uint32_t>(c.vocab_size));
  w.u32(static_cast<std::uint32_t>(c.d_model));
  w.u32(static_cast<std::uint32_t>(c.n_layers));
  w.u32(static_cast<std::uint32_t>(c.n_heads));
  w.u32(static_cast<std::uint32_t>(c.d_ff));
  w.u32(static_cast<std::uint32_t>(c.max_len));
  w.f64(c.dropout_rate);
  w.u32(static_cast<std::uint32_t>(c.seed & 0xffffffffULL));
  w.u32(static_cast<std::uint32_t>(c.seed >> 32));
  std::uint32_t count = 0;
  params.for_each_tensor([&](const std::string&, const Eigen::MatrixXd&) { ++count; });
  w.u32(count);
  params.for_each_tensor([&](const std::string& name, const Eigen::MatrixXd& t) {
    w.str(name);
    w.matrix_f32(t);
  });
  return w.data();
}

StudentParams decode_student(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(4) != "STU1") fail(ErrorKind::Format, "bad magic (expected STU1) at byte offset 0");
  if (r.u32() != 1) r.fail_at("unsupported STU1 version");
  StudentConfig c;
  c.vocab_size = r.u32();
  c.d_model = static_cast<int>(r.u32());
  c.n_layers = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.d_ff = static_cast<int>(r.u32());
  c.max_len = static_cast<int>(r.u32());
  c.dropout_rate = r.f64();
  const std::uint64_t lo = r.u32();
  const std::uint64_t hi = r.u32();
  c.seed = lo | (hi << 32);
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Format, std::string("invalid STU1 config: ") + e.what());
  }
  StudentParams p;
  p.cfg = c;
  p.positional_encoding = sinusoidal_encoding(c.max_len, c.d_model);
  p.layers.resize(static_cast<std::size_t>(c.n_layers));
  // Shapes come from a freshly shaped zero set so a file cannot smuggle in others.
  StudentParams shape;
  shape.cfg = c;
  shape.layers.resize(p.layers.size());
  {
    const auto d = c.d_model;
    shape.token_embedding.resize(c.vocab_size, d);
    for (auto& l : shape.layers) {
      l.W_Q.resize(d, d);
      l.W_K.resize(d, d);
      l.W_V.resize(d, d);
      l.W_O.resize(d, d);
      l.W_1.resize(d, c.d_ff);
      l.b_1.resize(1, c.d_ff);
      l.W_2.resize(c.d_ff, d);
      l.b_2.resize(1, d);
      l.ln1_gamma.resize(1, d);
      l.ln1_beta.resize(1, d);
      l.ln2_gamma.resize(1, d);
      l.ln2_beta.resize(1, d);
    }
  }
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> expected;
  shape.for_each_tensor([&](const std::string& n, const Eigen::MatrixXd& t) { expected.emplace_back(n, &t); });
  if (r.u32() != expected.size()) r.fail_at("unexpected tensor count");
  std::size_t i = 0;
  p.for_each_tensor([&](const std::string&, Eigen::MatrixXd& t) {
    const auto name = r.str();
    if (name != expected[i].first) r.fail_at("expected tensor " + expected[i].first + ", found " + name);
    t = r.matrix_f32();
    if (t.rows() != expected[i].second->rows() || t.cols() != expected[i].second->cols()) {
      r.fail_at("tensor " + name + " has the wrong shape");
    }
    ++i;
  });
  if (!r.at_end()) r.fail_at("trailing bytes");
  return p;
}

void save_student(const StudentParams& params, const std::filesystem::path& path) {
  atomic_write(path, encode_student(params));
}

StudentParams load_student(const std::filesystem::path& path) { return decode_student(read_file(path)); }

}  // namespace mwpkd
