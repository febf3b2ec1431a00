#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "mwpkd/binary_io.hpp"
#include "mwpkd/decode.hpp"
#include "mwpkd/error.hpp"
#include "mwpkd/rng.hpp"
#include "mwpkd/synth.hpp"

namespace mwpkd {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view task_name(Task t) {
  switch (t) {
    case Task::RELATION: return "RELATION";
    case Task::EQUATION: return "EQUATION";
    case Task::POS: return "POS";
  }
  return "?";
}

std::optional<Task> parse_task(std::string_view name) {
  std::string upper(name);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Task t : {Task::RELATION, Task::EQUATION, Task::POS})
    if (task_name(t) == upper) return t;
  return std::nullopt;
}

MatrixXd quantity_vectors(const MatrixXd& V, const std::vector<int>& quantity_indices) {
  if (quantity_indices.empty()) fail(ErrorKind::EmptyQuantity, "problem has no quantity tokens");
  MatrixXd N(static_cast<Eigen::Index>(quantity_indices.size()), V.cols());
  for (std::size_t i = 0; i < quantity_indices.size(); ++i) {
    const int q = quantity_indices[i];
    if (q < 0 || q >= V.rows()) {
      fail(ErrorKind::Index, "quantity index " + std::to_string(q) + " outside [0, " + std::to_string(V.rows()) + ")");
    }
    N.row(static_cast<Eigen::Index>(i)) = V.row(q);
  }
  return N;
}

namespace {

MatrixXd xavier(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

VectorXd softmax(const VectorXd& x) {
  VectorXd e = (x.array() - x.maxCoeff()).exp().matrix();
  return e / e.sum();
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void check_dim(const MatrixXd& V, Eigen::Index d, const char* head) {
  if (V.cols() != d) {
    fail(ErrorKind::Shape, std::string(head) + " expects width " + std::to_string(d) + ", got " +
                               std::to_string(V.cols()));
  }
  if (V.rows() < 1) fail(ErrorKind::Shape, std::string(head) + " got an empty sequence");
}

}  // namespace

// ---- QRAN ----

QranParams init_qran(int d, int h, std::uint64_t seed) {
  if (d < 1 || h < 1) fail(ErrorKind::Param, "QRAN dims must be positive");
  Rng rng(seed);
  QranParams p;
  p.W_r = xavier(rng, h, 2 * d);
  p.alpha = xavier(rng, h, 1);
  // Zero output layer: the untrained head predicts exactly 0.5.
  p.W_c = MatrixXd::Zero(1, d);
  p.beta_c = MatrixXd::Zero(1, 1);
  return p;
}

QranGoal qran_goal_vector(const MatrixXd& V, const MatrixXd& N, const QranParams& p) {
  const auto d = p.W_c.cols();
  check_dim(V, d, "QRAN");
  if (N.cols() != d || N.rows() < 1) fail(ErrorKind::Shape, "quantity matrix shape mismatch");
  if (p.W_r.cols() != 2 * d || p.alpha.rows() != p.W_r.rows()) fail(ErrorKind::Shape, "QRAN parameter shapes");
  const VectorXd vbar = V.colwise().mean().transpose();
  QranGoal g;
  g.logits.resize(N.rows());
  VectorXd z(2 * d);
  z.head(d) = vbar;
  for (Eigen::Index i = 0; i < N.rows(); ++i) {
    z.tail(d) = N.row(i).transpose();
    g.logits(i) = p.alpha.col(0).dot((p.W_r * z).array().tanh().matrix());
  }
  g.attention = softmax(g.logits);
  g.v_g = N.transpose() * g.attention;
  return g;
}

double qran_predict(const VectorXd& v_g, const QranParams& p) {
  if (v_g.size() != p.W_c.cols()) fail(ErrorKind::Shape, "goal vector width mismatch");
  return sigmoid(p.W_c.row(0).dot(v_g) + p.beta_c(0, 0));
}

double qran_loss(const MatrixXd& V, const std::vector<int>& quantity_indices, int label, const QranParams& p,
                 QranParams& g, MatrixXd* dV) {
  if (label != 0 && label != 1) fail(ErrorKind::Label, "relation label must be 0 or 1");
  const auto d = p.W_c.cols();
  const MatrixXd N = quantity_vectors(V, quantity_indices);
  const QranGoal goal = qran_goal_vector(V, N, p);
  const double logit = p.W_c.row(0).dot(goal.v_g) + p.beta_c(0, 0);
  const double loss = softplus(logit) - label * logit;
  const double dlogit = sigmoid(logit) - label;

  g.W_c.row(0) += dlogit * goal.v_g.transpose();
  g.beta_c(0, 0) += dlogit;
  const VectorXd dvg = dlogit * p.W_c.row(0).transpose();
  const VectorXd da = N * dvg;
  const VectorXd dmu = goal.attention.array() * (da.array() - goal.attention.dot(da));
  MatrixXd dN = goal.attention * dvg.transpose();
  VectorXd dvbar = VectorXd::Zero(d);
  const VectorXd vbar = V.colwise().mean().transpose();
  VectorXd z(2 * d);
  z.head(d) = vbar;
  for (Eigen::Index i = 0; i < N.rows(); ++i) {
    z.tail(d) = N.row(i).transpose();
    const VectorXd h = (p.W_r * z).array().tanh().matrix();
    g.alpha.col(0) += dmu(i) * h;
    const VectorXd dpre = dmu(i) * (p.alpha.col(0).array() * (1.0 - h.array().square())).matrix();
    g.W_r += dpre * z.transpose();
    const VectorXd dz = p.W_r.transpose() * dpre;
    dvbar += dz.head(d);
    dN.row(i) += dz.tail(d).transpose();
  }
  if (dV != nullptr) {
    dV->rowwise() += (dvbar / static_cast<double>(V.rows())).transpose();
    for (std::size_t i = 0; i < quantity_indices.size(); ++i) {
      dV->row(quantity_indices[i]) += dN.row(static_cast<Eigen::Index>(i));
    }
  }
  return loss;
}

// ---- tree decoder ----

TreeDecoderParams init_tree_decoder(int d, std::uint64_t seed, const std::vector<std::string>& constants) {
  if (d < 1) fail(ErrorKind::Param, "tree decoder width must be positive");
  for (const auto& c : constants) (void)ExprNode::make_constant(c);
  Rng rng(seed);
  TreeDecoderParams p;
  p.constants = constants;
  p.op_embedding = xavier(rng, 5, d);
  p.const_embedding = constants.empty() ? MatrixXd(0, d) : xavier(rng, static_cast<Eigen::Index>(constants.size()), d);
  p.W_s = xavier(rng, d, 2 * d);
  p.w_s = xavier(rng, d, 1);
  p.W_l = xavier(rng, d, 2 * d);
  p.W_rg = xavier(rng, d, 3 * d);
  p.W_m = xavier(rng, d, 3 * d);
  p.u_p = xavier(rng, d, 1);
  return p;
}

namespace {

constexpr int kOpCount = 5;

int op_index(Op op) {
  for (int i = 0; i < kOpCount; ++i)
    if (kOperators[i] == op) return i;
  return 0;
}

// Shared per-problem state: candidate embeddings and their half of the scoring map.
struct TreeContext {
  const TreeDecoderParams& p;
  const MatrixXd& V;
  const std::vector<int>& qidx;
  Eigen::Index d;
  int n_const;
  MatrixXd cand;     // candidates x d
  MatrixXd cand_pre; // candidates x d: rows of cand * W_s[:, d:]^T
  VectorXd root_attention;
  VectorXd root_goal;

  TreeContext(const TreeDecoderParams& params, const MatrixXd& vectors, const std::vector<int>& indices)
      : p(params), V(vectors), qidx(indices), d(params.W_s.rows()),
        n_const(static_cast<int>(params.constants.size())) {
    check_dim(V, d, "tree decoder");
    const MatrixXd N = indices.empty() ? MatrixXd(0, d) : quantity_vectors(V, indices);
    cand.resize(kOpCount + n_const + N.rows(), d);
    cand.topRows(kOpCount) = p.op_embedding;
    if (n_const > 0) cand.middleRows(kOpCount, n_const) = p.const_embedding;
    if (N.rows() > 0) cand.bottomRows(N.rows()) = N;
    cand_pre = cand * p.W_s.rightCols(d).transpose();
    root_attention = softmax(V * p.u_p.col(0));
    root_goal = V.transpose() * root_attention;
  }

  Eigen::Index candidates() const { return cand.rows(); }

  // Hidden activations per candidate for goal q.
  MatrixXd hidden(const VectorXd& q) const {
    const VectorXd qpart = p.W_s.leftCols(d) * q;
    return (cand_pre.rowwise() + qpart.transpose()).array().tanh().matrix();
  }

  VectorXd left_goal(const VectorXd& q, int op, VectorXd& z) const {
    z.resize(2 * d);
    z << q, p.op_embedding.row(op).transpose();
    return (p.W_l * z).array().tanh().matrix();
  }
  VectorXd right_goal(const VectorXd& q, int op, const VectorXd& tl, VectorXd& z) const {
    z.resize(3 * d);
    z << q, p.op_embedding.row(op).transpose(), tl;
    return (p.W_rg * z).array().tanh().matrix();
  }
  VectorXd merge(int op, const VectorXd& tl, const VectorXd& tr, VectorXd& z) const {
    z.resize(3 * d);
    z << p.op_embedding.row(op).transpose(), tl, tr;
    return (p.W_m * z).array().tanh().matrix();
  }

  ExprNode node_for(Eigen::Index c) const {
    if (c < kOpCount) return ExprNode::make_op(kOperators[c]);
    if (c < kOpCount + n_const) return ExprNode::make_constant(p.constants[static_cast<std::size_t>(c - kOpCount)]);
    return ExprNode::make_slot(static_cast<int>(c - kOpCount - n_const));
  }

  Eigen::Index candidate_for(const ExprNode& n) const {
    switch (n.kind) {
      case ExprNode::Kind::Operator: return op_index(n.op);
      case ExprNode::Kind::Constant:
        for (int i = 0; i < n_const; ++i) {
          const auto c = ExprNode::make_constant(p.constants[static_cast<std::size_t>(i)]);
          if (c.value == n.value) return kOpCount + i;
        }
        fail(ErrorKind::Label, "constant " + n.text + " is not in the decoder's constant vocabulary");
      case ExprNode::Kind::NumberSlot:
        if (n.slot >= static_cast<int>(qidx.size())) {
          fail(ErrorKind::Label, "equation uses N" + std::to_string(n.slot) + " but the problem has " +
                                     std::to_string(qidx.size()) + " quantities");
        }
        return kOpCount + n_const + n.slot;
    }
    return 0;
  }
};

struct TrainNode {
  VectorXd q;
  MatrixXd H;
  VectorXd probs;
  Eigen::Index gold = 0;
  int op = -1;
  int left = -1, right = -1;
  VectorXd zl, ql, zr, qr, zm, t;
};

struct TreeTrainer {
  TreeContext& ctx;
  const ExprTree& gold;
  std::vector<TrainNode> nodes;
  double loss = 0.0;

  // Returns the cache index of the subtree rooted at gold node `i`; `next` is the following prefix index.
  int forward(std::size_t i, const VectorXd& q, std::size_t& next) {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    {
      auto& n = nodes.back();
      n.q = q;
      n.H = ctx.hidden(q);
      const VectorXd s = n.H * ctx.p.w_s.col(0);
      n.probs = softmax(s);
      n.gold = ctx.candidate_for(gold.nodes()[i]);
      loss -= std::log(std::max(n.probs(n.gold), 1e-300));
    }
    if (nodes[static_cast<std::size_t>(id)].gold >= kOpCount) {
      nodes[static_cast<std::size_t>(id)].t = ctx.cand.row(nodes[static_cast<std::size_t>(id)].gold).transpose();
      next = i + 1;
      return id;
    }
    const int op = static_cast<int>(nodes[static_cast<std::size_t>(id)].gold);
    VectorXd zl;
    const VectorXd ql = ctx.left_goal(q, op, zl);
    std::size_t after_left = 0;
    const int left = forward(i + 1, ql, after_left);
    const VectorXd tl = nodes[static_cast<std::size_t>(left)].t;
    VectorXd zr;
    const VectorXd qr = ctx.right_goal(q, op, tl, zr);
    const int right = forward(after_left, qr, next);
    VectorXd zm;
    const VectorXd t = ctx.merge(op, tl, nodes[static_cast<std::size_t>(right)].t, zm);
    auto& n = nodes[static_cast<std::size_t>(id)];
    n.op = op;
    n.left = left;
    n.right = right;
    n.zl = std::move(zl);
    n.ql = ql;
    n.zr = std::move(zr);
    n.qr = qr;
    n.zm = std::move(zm);
    n.t = t;
    return id;
  }

  // Returns d loss / d q for node `id` given d loss / d t.
  VectorXd backward(int id, const VectorXd& dt, TreeDecoderParams& g, MatrixXd& dcand) {
    const auto& n = nodes[static_cast<std::size_t>(id)];
    const auto d = ctx.d;
    const auto& p = ctx.p;
    VectorXd dq = VectorXd::Zero(d);

    VectorXd ds = n.probs;
    ds(n.gold) -= 1.0;
    g.w_s.col(0) += n.H.transpose() * ds;
    const MatrixXd dpre = ((ds * p.w_s.col(0).transpose()).array() * (1.0 - n.H.array().square())).matrix();
    const VectorXd dpre_sum = dpre.colwise().sum().transpose();
    g.W_s.leftCols(d) += dpre_sum * n.q.transpose();
    dq += p.W_s.leftCols(d).transpose() * dpre_sum;
    g.W_s.rightCols(d) += dpre.transpose() * ctx.cand;
    dcand += dpre * p.W_s.rightCols(d);

    if (n.op < 0) {
      dcand.row(n.gold) += dt.transpose();
      return dq;
    }
    VectorXd dop = VectorXd::Zero(d);
    const VectorXd dm_pre = (dt.array() * (1.0 - n.t.array().square())).matrix();
    g.W_m += dm_pre * n.zm.transpose();
    const VectorXd dzm = p.W_m.transpose() * dm_pre;
    dop += dzm.head(d);
    VectorXd dtl = dzm.segment(d, d);
    const VectorXd dtr = dzm.tail(d);

    const VectorXd dqr = backward(n.right, dtr, g, dcand);
    const VectorXd dr_pre = (dqr.array() * (1.0 - n.qr.array().square())).matrix();
    g.W_rg += dr_pre * n.zr.transpose();
    const VectorXd dzr = p.W_rg.transpose() * dr_pre;
    dq += dzr.head(d);
    dop += dzr.segment(d, d);
    dtl += dzr.tail(d);

    const VectorXd dql = backward(n.left, dtl, g, dcand);
    const VectorXd dl_pre = (dql.array() * (1.0 - n.ql.array().square())).matrix();
    g.W_l += dl_pre * n.zl.transpose();
    const VectorXd dzl = p.W_l.transpose() * dl_pre;
    dq += dzl.head(d);
    dop += dzl.tail(d);

    g.op_embedding.row(n.op) += dop.transpose();
    return dq;
  }
};

struct Decoder {
  const TreeContext& ctx;
  int max_depth;
  std::vector<ExprNode> out;
  bool capped = false;

  VectorXd decode(const VectorXd& q, int depth) {
    const VectorXd s = ctx.hidden(q) * ctx.p.w_s.col(0);
    const bool allow_ops = depth < max_depth;
    Eigen::Index best = -1;
    for (Eigen::Index c = allow_ops ? 0 : kOpCount; c < s.size(); ++c) {
      if (best < 0 || s(c) > s(best)) best = c;
    }
    if (best < 0) fail(ErrorKind::Decode, "no leaf candidate: the problem has no quantities and no constants");
    if (!allow_ops) {
      for (Eigen::Index c = 0; c < kOpCount; ++c)
        if (s(c) > s(best)) capped = true;
    }
    out.push_back(ctx.node_for(best));
    if (best >= kOpCount) return ctx.cand.row(best).transpose();
    const int op = static_cast<int>(best);
    VectorXd z;
    const VectorXd tl = decode(ctx.left_goal(q, op, z), depth + 1);
    const VectorXd tr = decode(ctx.right_goal(q, op, tl, z), depth + 1);
    return ctx.merge(op, tl, tr, z);
  }
};

}  // namespace

DecodeOutput tree_decode(const MatrixXd& V, const std::vector<int>& quantity_indices, const TreeDecoderParams& p,
                         int max_depth) {
  if (max_depth < 0) fail(ErrorKind::Param, "max_depth must be non-negative");
  TreeContext ctx(p, V, quantity_indices);
  Decoder dec{ctx, max_depth, {}, false};
  dec.decode(ctx.root_goal, 0);
  DecodeOutput out;
  out.tree = ExprTree(std::move(dec.out));
  out.depth_capped = dec.capped;
  return out;
}

double tree_loss(const MatrixXd& V, const std::vector<int>& quantity_indices, const ExprTree& gold,
                 const TreeDecoderParams& p, TreeDecoderParams& g, MatrixXd* dV) {
  if (gold.empty()) fail(ErrorKind::Label, "empty gold equation");
  TreeContext ctx(p, V, quantity_indices);
  TreeTrainer tr{ctx, gold, {}, 0.0};
  std::size_t next = 0;
  tr.forward(0, ctx.root_goal, next);
  if (next != gold.nodes().size()) fail(ErrorKind::Label, "gold equation is not a single tree");

  MatrixXd dcand = MatrixXd::Zero(ctx.candidates(), ctx.d);
  const VectorXd dq_root = tr.backward(0, VectorXd::Zero(ctx.d), g, dcand);

  g.op_embedding += dcand.topRows(kOpCount);
  if (ctx.n_const > 0) g.const_embedding += dcand.middleRows(kOpCount, ctx.n_const);
  // Root pooling: q = V^T a, a = softmax(V u_p).
  const VectorXd& a = ctx.root_attention;
  const VectorXd da = V * dq_root;
  const VectorXd dlogit = a.array() * (da.array() - a.dot(da));
  g.u_p.col(0) += V.transpose() * dlogit;
  if (dV != nullptr) {
    *dV += a * dq_root.transpose();
    *dV += dlogit * p.u_p.col(0).transpose();
    const auto base = kOpCount + ctx.n_const;
    for (std::size_t i = 0; i < quantity_indices.size(); ++i) {
      dV->row(quantity_indices[i]) += dcand.row(base + static_cast<Eigen::Index>(i));
    }
  }
  return tr.loss;
}

// ---- POS ----

PosHeadParams init_pos_head(int d, std::uint64_t seed) {
  if (d < 1) fail(ErrorKind::Param, "POS head width must be positive");
  Rng rng(seed);
  PosHeadParams p;
  p.W_p = xavier(rng, kPosTagCount, d);
  p.b_p = MatrixXd::Zero(kPosTagCount, 1);
  return p;
}

MatrixXd pos_predict(const MatrixXd& V, const PosHeadParams& p) {
  check_dim(V, p.W_p.cols(), "POS head");
  MatrixXd logits = V * p.W_p.transpose();
  logits.rowwise() += p.b_p.col(0).transpose();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) logits.row(i) = softmax(logits.row(i).transpose()).transpose();
  return logits;
}

std::vector<PosTag> pos_argmax(const MatrixXd& probs) {
  std::vector<PosTag> out;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c)
      if (probs(i, c) > probs(i, best)) best = c;
    out.push_back(static_cast<PosTag>(best));
  }
  return out;
}

double pos_loss(const MatrixXd& V, const std::vector<PosTag>& tags, const PosHeadParams& p, PosHeadParams& g,
                MatrixXd* dV) {
  if (static_cast<Eigen::Index>(tags.size()) != V.rows()) {
    fail(ErrorKind::Label, "POS tag count " + std::to_string(tags.size()) + " != token count " +
                               std::to_string(V.rows()));
  }
  const MatrixXd probs = pos_predict(V, p);
  const double n = static_cast<double>(V.rows());
  double loss = 0.0;
  MatrixXd dlogits = probs;
  for (Eigen::Index i = 0; i < V.rows(); ++i) {
    const auto t = static_cast<Eigen::Index>(tags[static_cast<std::size_t>(i)]);
    loss -= std::log(std::max(probs(i, t), 1e-300));
    dlogits(i, t) -= 1.0;
  }
  dlogits /= n;
  g.W_p += dlogits.transpose() * V;
  g.b_p.col(0) += dlogits.colwise().sum().transpose();
  if (dV != nullptr) *dV += dlogits * p.W_p;
  return loss / n;
}

// ---- container ----

HeadParams init_head(Task task, int dim, std::uint64_t seed, const std::vector<std::string>& constants) {
  HeadParams h;
  h.task = task;
  h.dim = dim;
  switch (task) {
    case Task::RELATION: h.qran = init_qran(dim, dim, seed); break;
    case Task::EQUATION: h.tree = init_tree_decoder(dim, seed, constants); break;
    case Task::POS: h.pos = init_pos_head(dim, seed); break;
  }
  return h;
}

HeadParams zero_like(const HeadParams& h) {
  HeadParams z = h;
  z.for_each_tensor([](const std::string&, MatrixXd& t) { t.setZero(); });
  return z;
}

double head_loss(const HeadParams& h, const MatrixXd& V, const MwpRecord& r, HeadParams& g, MatrixXd* dV) {
  switch (h.task) {
    case Task::RELATION: return qran_loss(V, r.quantity_indices, r.relation_label, h.qran, g.qran, dV);
    case Task::EQUATION: return tree_loss(V, r.quantity_indices, r.equation(), h.tree, g.tree, dV);
    case Task::POS: return pos_loss(V, r.pos_tags, h.pos, g.pos, dV);
  }
  return 0.0;
}

std::string encode_head(const HeadParams& h) {
  ByteWriter w;
  w.bytes("HDR1");
  w.u32(1);
  w.u8(static_cast<std::uint8_t>(h.task));
  w.u32(static_cast<std::uint32_t>(h.dim));
  const auto& consts = h.task == Task::EQUATION ? h.tree.constants : std::vector<std::string>{};
  w.u32(static_cast<std::uint32_t>(consts.size()));
  for (const auto& c : consts) w.str(c);
  std::uint32_t count = 0;
  h.for_each_tensor([&](const std::string&, const MatrixXd&) { ++count; });
  w.u32(count);
  h.for_each_tensor([&](const std::string& name, const MatrixXd& t) {
    w.str(name);
    w.matrix_f32(t);
  });
  return w.data();
}

HeadParams decode_head(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(4) != "HDR1") fail(ErrorKind::Format, "bad magic (expected HDR1) at byte offset 0");
  if (r.u32() != 1) r.fail_at("unsupported HDR1 version");
  const auto task = r.u8();
  if (task > static_cast<std::uint8_t>(Task::POS)) r.fail_at("unknown head task");
  const auto dim = static_cast<int>(r.u32());
  if (dim < 1) r.fail_at("head dim must be positive");
  const auto n_const = r.u32();
  if (n_const > r.remaining()) r.fail_at("constant count exceeds file size");
  std::vector<std::string> consts;
  for (std::uint32_t i = 0; i < n_const; ++i) consts.push_back(r.str());
  HeadParams h;
  try {
    h = init_head(static_cast<Task>(task), dim, 0, consts);
  } catch (const Error& e) {
    fail(ErrorKind::Format, std::string("invalid head header: ") + e.what());
  }
  std::uint32_t expected = 0;
  h.for_each_tensor([&](const std::string&, const MatrixXd&) { ++expected; });
  if (r.u32() != expected) r.fail_at("unexpected tensor count");
  h.for_each_tensor([&](const std::string& name, MatrixXd& t) {
    const auto found = r.str();
    if (found != name) r.fail_at("expected tensor " + name + ", found " + found);
    MatrixXd m = r.matrix_f32();
    // QRAN's hidden width is free; everything else must keep its shape.
    const bool free_rows = name == "W_r" || name == "alpha";
    if (m.cols() != t.cols() || (!free_rows && m.rows() != t.rows())) r.fail_at("tensor " + name + " has the wrong shape");
    t = std::move(m);
  });
  if (h.task == Task::RELATION && h.qran.W_r.rows() != h.qran.alpha.rows()) {
    fail(ErrorKind::Format, "W_r and alpha disagree on hidden width");
  }
  if (!r.at_end()) r.fail_at("trailing bytes");
  return h;
}

void save_head(const HeadParams& h, const std::filesystem::path& path) { atomic_write(path, encode_head(h)); }

HeadParams load_head(const std::filesystem::path& path) { return decode_head(read_file(path)); }

// ---- predictions ----

bool answer_matches(double predicted, double gold) {
  return std::isfinite(predicted) && std::abs(predicted - gold) <= 1e-4 * std::max(1.0, std::abs(gold));
}

Prediction predict(const HeadParams& h, const MatrixXd& V, const MwpRecord& r, const PredictOptions& opts) {
  Prediction p;
  p.id = r.id;
  p.task = h.task;
  switch (h.task) {
    case Task::RELATION: {
      const auto goal = qran_goal_vector(V, quantity_vectors(V, r.quantity_indices), h.qran);
      p.score = qran_predict(goal.v_g, h.qran);
      p.prediction = p.score >= 0.5 ? "1" : "0";
      break;
    }
    case Task::EQUATION: {
      const auto out = tree_decode(V, r.quantity_indices, h.tree, opts.max_depth);
      const auto tokens = out.tree.prefix_tokens();
      for (std::size_t i = 0; i < tokens.size(); ++i) p.prediction += (i ? " " : "") + tokens[i];
      try {
        const auto q = r.quantity_doubles();
        p.score = eval_expr(out.tree, q);
        p.answer_valid = true;
      } catch (const Error&) {
        p.answer_valid = false;
      }
      break;
    }
    case Task::POS: {
      const MatrixXd probs = pos_predict(V, h.pos);
      const auto tags = pos_argmax(probs);
      for (std::size_t i = 0; i < tags.size(); ++i) p.prediction += std::string(i ? " " : "") + std::string(pos_name(tags[i]));
      p.score = probs.rowwise().maxCoeff().mean();
      break;
    }
  }
  return p;
}

std::string predictions_to_jsonl(const std::vector<Prediction>& preds) {
  std::string out;
  for (const auto& p : preds) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["task"] = std::string(task_name(p.task));
    j["prediction"] = p.prediction;
    if (p.task == Task::EQUATION && !p.answer_valid) {
      j["score"] = nullptr;
    } else {
      j["score"] = p.score;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---- attribution ----

std::string_view category_name(TokenCategory c) {
  switch (c) {
    case TokenCategory::PUNCTUATION: return "punctuation";
    case TokenCategory::NOUN: return "noun";
    case TokenCategory::NUMBER: return "number";
    case TokenCategory::KEYWORD: return "keyword";
    case TokenCategory::QUANTITY_WORD: return "quantity-word";
    case TokenCategory::OTHER: return "other";
  }
  return "?";
}

namespace {

TokenCategory categorize(std::string_view token, PosTag tag) {
  static const std::set<std::string, std::less<>> keywords = {
      "more", "less", "fewer", "total", "each", "every", "per", "times", "left", "remain", "remaining",
      "altogether", "sum", "difference", "how", "many", "much", "equally", "share", "split", "of"};
  std::string lower(token);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const auto& q : descriptive_lexicon())
    if (q.word == lower) return TokenCategory::QUANTITY_WORD;
  if (tag == PosTag::PUNCT) return TokenCategory::PUNCTUATION;
  if (tag == PosTag::NUM) return TokenCategory::NUMBER;
  if (keywords.count(lower) > 0) return TokenCategory::KEYWORD;
  if (tag == PosTag::NOUN) return TokenCategory::NOUN;
  return TokenCategory::OTHER;
}

}  // namespace

std::vector<AttributionRow> top_token_attribution(const EmbeddingSet& E, const std::vector<MwpRecord>& records,
                                                  int top_m) {
  if (top_m < 1) fail(ErrorKind::Param, "top_m must be positive");
  const auto index = align(E, records);
  std::vector<double> best(E.dim, -1.0);
  std::vector<TokenCategory> best_cat(E.dim, TokenCategory::OTHER);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& m = E.problems[index[r]].matrix;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const auto cat = categorize(records[r].tokens[static_cast<std::size_t>(i)],
                                  records[r].pos_tags[static_cast<std::size_t>(i)]);
      for (std::uint32_t j = 0; j < E.dim; ++j) {
        const double v = std::abs(static_cast<double>(m(i, j)));
        if (v > best[j]) {
          best[j] = v;
          best_cat[j] = cat;
        }
      }
    }
  }
  std::vector<AttributionRow> rows;
  for (int c = 0; c < kTokenCategoryCount; ++c) rows.push_back({static_cast<TokenCategory>(c), 0});
  for (std::uint32_t j = 0; j < E.dim; ++j)
    if (best[j] >= 0.0) ++rows[static_cast<std::size_t>(best_cat[j])].count;
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
  if (static_cast<std::size_t>(top_m) < rows.size()) rows.resize(static_cast<std::size_t>(top_m));
  return rows;
}

}  // namespace mwpkd
