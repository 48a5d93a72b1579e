#include "refldepth/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "refldepth/parallel.hpp"

namespace refldepth::diff {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

bool is_binary_mask(const Tensor& m) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0f && m[i] != 1.0f) return false;
  }
  return true;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kAbs: return "abs";
    case Op::kLog: return "log";
    case Op::kHinge: return "hinge";
    case Op::kSigmoid: return "sigmoid";
    case Op::kClamp: return "clamp";
    case Op::kScale: return "scale";
    case Op::kChannelMean: return "channel_mean";
    case Op::kPixelMin: return "pixel_min";
    case Op::kMean: return "mean";
    case Op::kMaskedMean: return "masked_mean";
    case Op::kBoxFilter3: return "box_filter3";
    case Op::kBilinear: return "bilinear";
    case Op::kSelect: return "select";
  }
  return "?";
}

NodeId Graph::push(Node node) {
  if (node.value.is_scalar() && std::isnan(node.scalar64)) {
    node.scalar64 = node.value[0];
  }
  if (node.op == Op::kParameter) {
    node.dynamic = true;
  } else {
    for (NodeId p : node.parents) {
      if (nodes_[p].dynamic) {
        node.dynamic = true;
        break;
      }
    }
  }
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Graph::Node& Graph::at(NodeId id) const { return nodes_[id]; }

void Graph::check_id(NodeId id, const char* op) const {
  require(id >= 0 && id < static_cast<NodeId>(nodes_.size()),
          std::string("op ") + op + ": node id " + std::to_string(id) +
              " not in graph");
}

NodeId Graph::parameter(Tensor init) {
  require(init.all_finite(), "op parameter: non-finite initial value");
  Node n;
  n.op = Op::kParameter;
  if (init.is_scalar()) n.scalar64 = init[0];
  n.value = std::move(init);
  const NodeId id = push(std::move(n));
  parameters_.push_back(id);
  return id;
}

NodeId Graph::constant(Tensor value) {
  require(value.all_finite(), "op constant: non-finite value");
  Node n;
  n.op = Op::kConstant;
  if (value.is_scalar()) n.scalar64 = value[0];
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::constant_scalar(double value) {
  require(std::isfinite(value), "op constant: non-finite value");
  Node n;
  n.op = Op::kConstant;
  n.value = Tensor::scalar(value);
  n.scalar64 = value;
  return push(std::move(n));
}

NodeId Graph::binary(Op op, NodeId a, NodeId b) {
  check_id(a, op_name(op));
  check_id(b, op_name(op));
  const Tensor& ta = at(a).value;
  const Tensor& tb = at(b).value;
  const bool a_scalar = ta.is_scalar();
  const bool b_scalar = tb.is_scalar();
  require(ta.same_shape(tb) || a_scalar || b_scalar,
          std::string("op ") + op_name(op) + ": shape " + ta.shape_string() +
              " vs " + tb.shape_string());

  const Tensor& shape_src = a_scalar ? tb : ta;
  Node n;
  n.op = op;
  n.parents = {a, b};
  n.value = Tensor(shape_src.height(), shape_src.width(),
                   shape_src.channels());

  const float* pa = ta.data();
  const float* pb = tb.data();
  float* out = n.value.data();
  const double a0 = a_scalar ? at(a).scalar64 : 0.0;
  const double b0 = b_scalar ? at(b).scalar64 : 0.0;
  const std::size_t row_len =
      static_cast<std::size_t>(shape_src.width()) * shape_src.channels();

  parallel_rows(shape_src.height(), threads_, [&](int y0, int y1) {
    for (std::size_t i = y0 * row_len; i < y1 * row_len; ++i) {
      const double x = a_scalar ? a0 : pa[i];
      const double y = b_scalar ? b0 : pb[i];
      double r = 0.0;
      switch (op) {
        case Op::kAdd: r = x + y; break;
        case Op::kSub: r = x - y; break;
        case Op::kMul: r = x * y; break;
        case Op::kDiv: r = x / y; break;
        default: break;
      }
      out[i] = static_cast<float>(r);
    }
  });

  if (n.value.is_scalar()) {
    const double x = at(a).scalar64;
    const double y = at(b).scalar64;
    switch (op) {
      case Op::kAdd: n.scalar64 = x + y; break;
      case Op::kSub: n.scalar64 = x - y; break;
      case Op::kMul: n.scalar64 = x * y; break;
      case Op::kDiv: n.scalar64 = x / y; break;
      default: break;
    }
  }
  if (op == Op::kDiv) {
    require(n.value.all_finite(), "op div: non-finite result");
  }
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary(Op::kSub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }
NodeId Graph::div(NodeId a, NodeId b) { return binary(Op::kDiv, a, b); }

NodeId Graph::unary_map(Op op, NodeId a,
                        const std::function<float(float)>& fn) {
  check_id(a, op_name(op));
  const Tensor& ta = at(a).value;
  Node n;
  n.op = op;
  n.parents = {a};
  n.value = Tensor(ta.height(), ta.width(), ta.channels());
  const float* pa = ta.data();
  float* out = n.value.data();
  const std::size_t row_len =
      static_cast<std::size_t>(ta.width()) * ta.channels();
  parallel_rows(ta.height(), threads_, [&](int y0, int y1) {
    for (std::size_t i = y0 * row_len; i < y1 * row_len; ++i) {
      out[i] = fn(pa[i]);
    }
  });
  return push(std::move(n));
}

NodeId Graph::neg(NodeId a) {
  const NodeId id = unary_map(Op::kNeg, a, [](float x) { return -x; });
  if (nodes_[id].value.is_scalar()) nodes_[id].scalar64 = -at(a).scalar64;
  return id;
}

NodeId Graph::abs(NodeId a) {
  const NodeId id =
      unary_map(Op::kAbs, a, [](float x) { return std::fabs(x); });
  if (nodes_[id].value.is_scalar())
    nodes_[id].scalar64 = std::fabs(at(a).scalar64);
  return id;
}

NodeId Graph::log(NodeId a) {
  check_id(a, "log");
  const Tensor& ta = at(a).value;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    require(ta[i] > 0.0f, "op log: non-positive input at flat index " +
                              std::to_string(i));
  }
  const NodeId id = unary_map(Op::kLog, a, [](float x) {
    return static_cast<float>(std::log(static_cast<double>(x)));
  });
  if (nodes_[id].value.is_scalar())
    nodes_[id].scalar64 = std::log(at(a).scalar64);
  return id;
}

NodeId Graph::hinge(NodeId a) {
  const NodeId id =
      unary_map(Op::kHinge, a, [](float x) { return x > 0.0f ? x : 0.0f; });
  if (nodes_[id].value.is_scalar())
    nodes_[id].scalar64 = std::max(0.0, at(a).scalar64);
  return id;
}

NodeId Graph::sigmoid(NodeId a) {
  const NodeId id = unary_map(Op::kSigmoid, a, [](float x) {
    return static_cast<float>(stable_sigmoid(x));
  });
  if (nodes_[id].value.is_scalar())
    nodes_[id].scalar64 = stable_sigmoid(at(a).scalar64);
  return id;
}

NodeId Graph::clamp(NodeId a, float lo, float hi) {
  require(lo <= hi, "op clamp: lo > hi");
  check_id(a, "clamp");
  const Tensor& ta = at(a).value;
  Node n;
  n.op = Op::kClamp;
  n.parents = {a};
  n.clamp_lo = lo;
  n.clamp_hi = hi;
  n.value = Tensor(ta.height(), ta.width(), ta.channels());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    n.value[static_cast<std::size_t>(i)] = std::min(std::max(ta[i], lo), hi);
  }
  if (n.value.is_scalar()) n.scalar64 = n.value[0];
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, float factor) {
  check_id(a, "scale");
  require(std::isfinite(factor), "op scale: non-finite factor");
  const Tensor& ta = at(a).value;
  Node n;
  n.op = Op::kScale;
  n.parents = {a};
  n.scale_factor = factor;
  n.value = Tensor(ta.height(), ta.width(), ta.channels());
  const float* pa = ta.data();
  float* out = n.value.data();
  const double f = factor;
  const std::size_t row_len =
      static_cast<std::size_t>(ta.width()) * ta.channels();
  parallel_rows(ta.height(), threads_, [&](int y0, int y1) {
    for (std::size_t i = y0 * row_len; i < y1 * row_len; ++i) {
      out[i] = static_cast<float>(f * pa[i]);
    }
  });
  if (n.value.is_scalar()) n.scalar64 = f * at(a).scalar64;
  return push(std::move(n));
}

NodeId Graph::channel_mean(NodeId a) {
  check_id(a, "channel_mean");
  const Tensor& ta = at(a).value;
  Node n;
  n.op = Op::kChannelMean;
  n.parents = {a};
  n.value = Tensor(ta.height(), ta.width(), 1);
  const int c = ta.channels();
  const int w = ta.width();
  const float* pa = ta.data();
  float* out = n.value.data();
  parallel_rows(ta.height(), threads_, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t base = (static_cast<std::size_t>(y) * w + x) * c;
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch) s += pa[base + ch];
        out[static_cast<std::size_t>(y) * w + x] =
            static_cast<float>(s / c);
      }
    }
  });
  if (ta.is_scalar()) n.scalar64 = at(a).scalar64;
  return push(std::move(n));
}

NodeId Graph::pixel_min(std::span<const NodeId> operands) {
  require(!operands.empty(), "op pixel_min: empty operand list");
  for (NodeId id : operands) check_id(id, "pixel_min");
  const Tensor& t0 = at(operands[0]).value;
  for (NodeId id : operands) {
    require(at(id).value.same_shape(t0),
            std::string("op pixel_min: shape ") +
                at(id).value.shape_string() + " vs " + t0.shape_string());
  }
  Node n;
  n.op = Op::kPixelMin;
  n.parents.assign(operands.begin(), operands.end());
  n.value = Tensor(t0.height(), t0.width(), t0.channels());
  float* out = n.value.data();
  const std::size_t row_len =
      static_cast<std::size_t>(t0.width()) * t0.channels();
  parallel_rows(t0.height(), threads_, [&](int y0, int y1) {
    for (std::size_t i = y0 * row_len; i < y1 * row_len; ++i) {
      float m = at(n.parents[0]).value[i];
      for (std::size_t k = 1; k < n.parents.size(); ++k) {
        const float v = at(n.parents[k]).value[i];
        if (v < m) m = v;
      }
      out[i] = m;
    }
  });
  if (n.value.is_scalar()) n.scalar64 = n.value[0];
  return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
  check_id(a, "mean");
  const Tensor& ta = at(a).value;
  Node n;
  n.op = Op::kMean;
  n.parents = {a};
  n.scalar64 = ta.sum() / static_cast<double>(ta.size());
  n.value = Tensor::scalar(n.scalar64);
  return push(std::move(n));
}

NodeId Graph::masked_mean(NodeId a, const Tensor& mask) {
  check_id(a, "masked_mean");
  const Tensor& ta = at(a).value;
  require(mask.channels() == 1 && mask.height() == ta.height() &&
              mask.width() == ta.width(),
          std::string("op masked_mean: mask shape ") + mask.shape_string() +
              " vs value " + ta.shape_string());
  require(is_binary_mask(mask), "op masked_mean: mask not 0/1");

  Node n;
  n.op = Op::kMaskedMean;
  n.parents = {a};
  n.aux = mask;

  const int c = ta.channels();
  const int w = ta.width();
  std::size_t count = 0;
  double total = 0.0;
  for (int y = 0; y < ta.height(); ++y) {
    double row = 0.0;
    for (int x = 0; x < w; ++x) {
      const float m = mask.at(y, x);
      if (m == 0.0f) continue;
      ++count;
      const float* px = ta.data() + (static_cast<std::size_t>(y) * w + x) * c;
      for (int ch = 0; ch < c; ++ch) row += px[ch];
    }
    total += row;
  }
  n.denom = static_cast<double>(count) * c;
  n.scalar64 = count == 0 ? 0.0 : total / n.denom;
  n.value = Tensor::scalar(n.scalar64);
  return push(std::move(n));
}

namespace {

// 3x3 box with replicate padding, separable. The operator is self-adjoint,
// so backward reuses it on the adjoint.
void box3_apply(const Tensor& in, Tensor& out, int threads) {
  const int h = in.height();
  const int w = in.width();
  const int c = in.channels();
  Tensor tmp(h, w, c);
  const float* src = in.data();
  float* tp = tmp.data();
  parallel_rows(h, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      const std::size_t row = static_cast<std::size_t>(y) * w * c;
      for (int x = 0; x < w; ++x) {
        const int xm = x > 0 ? x - 1 : 0;
        const int xp = x < w - 1 ? x + 1 : w - 1;
        for (int ch = 0; ch < c; ++ch) {
          const double s = static_cast<double>(src[row + xm * c + ch]) +
                           src[row + x * c + ch] + src[row + xp * c + ch];
          tp[row + x * c + ch] = static_cast<float>(s);
        }
      }
    }
  });
  float* op = out.data();
  const std::size_t row_len = static_cast<std::size_t>(w) * c;
  parallel_rows(h, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      const int ym = y > 0 ? y - 1 : 0;
      const int yp = y < h - 1 ? y + 1 : h - 1;
      const float* ra = tp + static_cast<std::size_t>(ym) * row_len;
      const float* rb = tp + static_cast<std::size_t>(y) * row_len;
      const float* rc = tp + static_cast<std::size_t>(yp) * row_len;
      float* ro = op + static_cast<std::size_t>(y) * row_len;
      for (std::size_t i = 0; i < row_len; ++i) {
        ro[i] = static_cast<float>(
            (static_cast<double>(ra[i]) + rb[i] + rc[i]) * (1.0 / 9.0));
      }
    }
  });
}

}  // namespace

NodeId Graph::box_filter3(NodeId a) {
  check_id(a, "box_filter3");
  const Tensor& ta = at(a).value;
  Node n;
  n.op = Op::kBoxFilter3;
  n.parents = {a};
  n.value = Tensor(ta.height(), ta.width(), ta.channels());
  box3_apply(ta, n.value, threads_);
  if (n.value.is_scalar()) n.scalar64 = n.value[0];
  return push(std::move(n));
}

NodeId Graph::bilinear(NodeId src, NodeId u, NodeId v) {
  check_id(src, "bilinear");
  check_id(u, "bilinear");
  check_id(v, "bilinear");
  const Tensor& ts = at(src).value;
  const Tensor& tu = at(u).value;
  const Tensor& tv = at(v).value;
  require(tu.channels() == 1 && tv.channels() == 1 && tu.same_shape(tv),
          std::string("op bilinear: coord shapes ") + tu.shape_string() +
              " vs " + tv.shape_string());

  Node n;
  n.op = Op::kBilinear;
  n.parents = {src, u, v};
  n.value = Tensor(tu.height(), tu.width(), ts.channels());

  const int sw = ts.width();
  const int sh = ts.height();
  const int c = ts.channels();
  const int ow = tu.width();
  const float* S = ts.data();
  const float* U = tu.data();
  const float* V = tv.data();
  float* out = n.value.data();

  parallel_rows(tu.height(), threads_, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < ow; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * ow + x;
        const double uc =
            std::min(std::max(static_cast<double>(U[i]), 0.0),
                     static_cast<double>(sw - 1));
        const double vc =
            std::min(std::max(static_cast<double>(V[i]), 0.0),
                     static_cast<double>(sh - 1));
        const int x0 = static_cast<int>(uc);
        const int y0s = static_cast<int>(vc);
        const int x1 = std::min(x0 + 1, sw - 1);
        const int y1s = std::min(y0s + 1, sh - 1);
        const double du = uc - x0;
        const double dv = vc - y0s;
        const std::size_t r0 = (static_cast<std::size_t>(y0s) * sw) * c;
        const std::size_t r1 = (static_cast<std::size_t>(y1s) * sw) * c;
        for (int ch = 0; ch < c; ++ch) {
          const double a = S[r0 + x0 * c + ch];
          const double b = S[r0 + x1 * c + ch];
          const double d = S[r1 + x0 * c + ch];
          const double e = S[r1 + x1 * c + ch];
          out[i * c + ch] = static_cast<float>(
              (1.0 - dv) * ((1.0 - du) * a + du * b) +
              dv * ((1.0 - du) * d + du * e));
        }
      }
    }
  });
  if (n.value.is_scalar()) n.scalar64 = n.value[0];
  return push(std::move(n));
}

NodeId Graph::select(const Tensor& mask, NodeId on_one, NodeId on_zero) {
  check_id(on_one, "select");
  check_id(on_zero, "select");
  const Tensor& ta = at(on_one).value;
  const Tensor& tb = at(on_zero).value;
  require(ta.same_shape(tb), std::string("op select: shape ") +
                                 ta.shape_string() + " vs " +
                                 tb.shape_string());
  require(mask.channels() == 1 && mask.height() == ta.height() &&
              mask.width() == ta.width(),
          std::string("op select: mask shape ") + mask.shape_string() +
              " vs value " + ta.shape_string());
  require(is_binary_mask(mask), "op select: mask not 0/1");

  Node n;
  n.op = Op::kSelect;
  n.parents = {on_one, on_zero};
  n.aux = mask;
  n.value = Tensor(ta.height(), ta.width(), ta.channels());
  const int c = ta.channels();
  const int w = ta.width();
  const float* pa = ta.data();
  const float* pb = tb.data();
  const float* pm = mask.data();
  float* out = n.value.data();
  parallel_rows(ta.height(), threads_, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t px = static_cast<std::size_t>(y) * w + x;
        const bool on = pm[px] != 0.0f;
        for (int ch = 0; ch < c; ++ch) {
          out[px * c + ch] = on ? pa[px * c + ch] : pb[px * c + ch];
        }
      }
    }
  });
  if (n.value.is_scalar()) n.scalar64 = n.value[0];
  return push(std::move(n));
}

const Tensor& Graph::value(NodeId id) const {
  check_id(id, "value");
  return nodes_[id].value;
}

double Graph::scalar_value(NodeId id) const {
  check_id(id, "scalar_value");
  require(nodes_[id].value.is_scalar(),
          "scalar_value: node is not 1x1x1 but " +
              nodes_[id].value.shape_string());
  return nodes_[id].scalar64;
}

std::unordered_map<NodeId, Tensor> Graph::backward(NodeId loss) const {
  check_id(loss, "backward");
  require(at(loss).value.is_scalar(),
          "backward: loss must be 1x1x1, got " +
              at(loss).value.shape_string());

  std::vector<Tensor> adj(nodes_.size());
  adj[loss] = Tensor::scalar(1.0);

  auto ensure = [&](NodeId id) -> Tensor& {
    if (adj[id].empty()) {
      const Tensor& v = nodes_[id].value;
      adj[id] = Tensor(v.height(), v.width(), v.channels());
    }
    return adj[id];
  };

  for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
    if (adj[id].empty()) continue;
    const Node& n = nodes_[id];
    const Tensor& g = adj[id];
    switch (n.op) {
      case Op::kConstant:
      case Op::kParameter:
        break;
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
      case Op::kDiv: {
        const NodeId a = n.parents[0];
        const NodeId b = n.parents[1];
        const Tensor& ta = at(a).value;
        const Tensor& tb = at(b).value;
        const bool a_scalar = ta.is_scalar() && !g.is_scalar();
        const bool b_scalar = tb.is_scalar() && !g.is_scalar();
        Tensor& ga = ensure(a);
        Tensor& gb = ensure(b);
        const double a0 = ta[0];
        const double b0 = tb[0];
        double sum_a = 0.0, sum_b = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double gi = g[i];
          const double xa = a_scalar ? a0 : ta[i];
          const double xb = b_scalar ? b0 : tb[i];
          double da = 0.0, db = 0.0;
          switch (n.op) {
            case Op::kAdd: da = gi; db = gi; break;
            case Op::kSub: da = gi; db = -gi; break;
            case Op::kMul: da = gi * xb; db = gi * xa; break;
            case Op::kDiv:
              da = gi / xb;
              db = -gi * xa / (xb * xb);
              break;
            default: break;
          }
          if (a_scalar) sum_a += da;
          else ga[i] += static_cast<float>(da);
          if (b_scalar) sum_b += db;
          else gb[i] += static_cast<float>(db);
        }
        if (a_scalar) ga[0] += static_cast<float>(sum_a);
        if (b_scalar) gb[0] += static_cast<float>(sum_b);
        break;
      }
      case Op::kNeg: {
        Tensor& ga = ensure(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
        break;
      }
      case Op::kAbs: {
        const Tensor& ta = at(n.parents[0]).value;
        Tensor& ga = ensure(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (ta[i] > 0.0f) ga[i] += g[i];
          else if (ta[i] < 0.0f) ga[i] -= g[i];
        }
        break;
      }
      case Op::kLog: {
        const Tensor& ta = at(n.parents[0]).value;
        Tensor& ga = ensure(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += static_cast<float>(static_cast<double>(g[i]) / ta[i]);
        }
        break;
      }
      case Op::kHinge: {
        const Tensor& ta = at(n.parents[0]).value;
        Tensor& ga = ensure(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (ta[i] > 0.0f) ga[i] += g[i];
        }
        break;
      }
      case Op::kSigmoid: {
        const Tensor& s = n.value;
        Tensor& ga = ensure(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double sv = s[i];
          ga[i] += static_cast<float>(g[i] * sv * (1.0 - sv));
        }
        break;
      }
      case Op::kClamp: {
        const Tensor& ta = at(n.parents[0]).value;
        Tensor& ga = ensure(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (ta[i] > n.clamp_lo && ta[i] < n.clamp_hi) ga[i] += g[i];
        }
        break;
      }
      case Op::kScale: {
        Tensor& ga = ensure(n.parents[0]);
        const double f = n.scale_factor;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += static_cast<float>(f * g[i]);
        }
        break;
      }
      case Op::kChannelMean: {
        const Tensor& ta = at(n.parents[0]).value;
        Tensor& ga = ensure(n.parents[0]);
        const int c = ta.channels();
        const double inv = 1.0 / c;
        for (std::size_t px = 0; px < g.size(); ++px) {
          const float contrib = static_cast<float>(g[px] * inv);
          for (int ch = 0; ch < c; ++ch) ga[px * c + ch] += contrib;
        }
        break;
      }
      case Op::kPixelMin: {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (g[i] == 0.0f) continue;
          const float m = n.value[i];
          for (NodeId p : n.parents) {
            if (at(p).value[i] == m) {
              ensure(p)[i] += g[i];
              break;
            }
          }
        }
        break;
      }
      case Op::kMean: {
        const Tensor& ta = at(n.parents[0]).value;
        Tensor& ga = ensure(n.parents[0]);
        const double gval = g[0];
        const float contrib =
            static_cast<float>(gval / static_cast<double>(ta.size()));
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += contrib;
        break;
      }
      case Op::kMaskedMean: {
        if (n.denom == 0.0) break;
        const Tensor& ta = at(n.parents[0]).value;
        Tensor& ga = ensure(n.parents[0]);
        const float contrib = static_cast<float>(g[0] / n.denom);
        const int c = ta.channels();
        const int w = ta.width();
        for (int y = 0; y < ta.height(); ++y) {
          for (int x = 0; x < w; ++x) {
            if (n.aux.at(y, x) == 0.0f) continue;
            const std::size_t base =
                (static_cast<std::size_t>(y) * w + x) * c;
            for (int ch = 0; ch < c; ++ch) ga[base + ch] += contrib;
          }
        }
        break;
      }
      case Op::kBoxFilter3: {
        Tensor& ga = ensure(n.parents[0]);
        Tensor back(g.height(), g.width(), g.channels());
        box3_apply(g, back, threads_);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += back[i];
        break;
      }
      case Op::kBilinear: {
        const Tensor& ts = at(n.parents[0]).value;
        const Tensor& tu = at(n.parents[1]).value;
        const Tensor& tv = at(n.parents[2]).value;
        Tensor& gs = ensure(n.parents[0]);
        Tensor& gu = ensure(n.parents[1]);
        Tensor& gv = ensure(n.parents[2]);
        const int sw = ts.width();
        const int sh = ts.height();
        const int c = ts.channels();
        const float* S = ts.data();
        // Scatter into the source stays sequential: contributions from
        // different output rows can hit the same source pixel.
        for (std::size_t i = 0; i < tu.size(); ++i) {
          const double uraw = tu[i];
          const double vraw = tv[i];
          const double uc = std::min(std::max(uraw, 0.0),
                                     static_cast<double>(sw - 1));
          const double vc = std::min(std::max(vraw, 0.0),
                                     static_cast<double>(sh - 1));
          const int x0 = static_cast<int>(uc);
          const int y0s = static_cast<int>(vc);
          const int x1 = std::min(x0 + 1, sw - 1);
          const int y1s = std::min(y0s + 1, sh - 1);
          const double du = uc - x0;
          const double dv = vc - y0s;
          const bool pass_u = uraw > 0.0 && uraw < sw - 1;
          const bool pass_v = vraw > 0.0 && vraw < sh - 1;
          double sum_du = 0.0, sum_dv = 0.0;
          const std::size_t r0 = (static_cast<std::size_t>(y0s) * sw) * c;
          const std::size_t r1 = (static_cast<std::size_t>(y1s) * sw) * c;
          for (int ch = 0; ch < c; ++ch) {
            const double gi = g[i * c + ch];
            if (gi == 0.0) continue;
            const double a = S[r0 + x0 * c + ch];
            const double b = S[r0 + x1 * c + ch];
            const double d = S[r1 + x0 * c + ch];
            const double e = S[r1 + x1 * c + ch];
            gs[r0 + x0 * c + ch] +=
                static_cast<float>(gi * (1.0 - du) * (1.0 - dv));
            gs[r0 + x1 * c + ch] += static_cast<float>(gi * du * (1.0 - dv));
            gs[r1 + x0 * c + ch] += static_cast<float>(gi * (1.0 - du) * dv);
            gs[r1 + x1 * c + ch] += static_cast<float>(gi * du * dv);
            sum_du += gi * ((1.0 - dv) * (b - a) + dv * (e - d));
            sum_dv += gi * ((1.0 - du) * (d - a) + du * (e - b));
          }
          if (pass_u) gu[i] += static_cast<float>(sum_du);
          if (pass_v) gv[i] += static_cast<float>(sum_dv);
        }
        break;
      }
      case Op::kSelect: {
        Tensor& ga = ensure(n.parents[0]);
        Tensor& gb = ensure(n.parents[1]);
        const int c = n.value.channels();
        const int w = n.value.width();
        for (int y = 0; y < n.value.height(); ++y) {
          for (int x = 0; x < w; ++x) {
            const std::size_t px = static_cast<std::size_t>(y) * w + x;
            const bool on = n.aux.data()[px] != 0.0f;
            for (int ch = 0; ch < c; ++ch) {
              if (on) ga[px * c + ch] += g[px * c + ch];
              else gb[px * c + ch] += g[px * c + ch];
            }
          }
        }
        break;
      }
    }
  }

  std::unordered_map<NodeId, Tensor> grads;
  grads.reserve(parameters_.size());
  for (NodeId p : parameters_) {
    if (adj[p].empty()) {
      const Tensor& v = nodes_[p].value;
      grads.emplace(p, Tensor(v.height(), v.width(), v.channels()));
    } else {
      grads.emplace(p, std::move(adj[p]));
    }
  }
  return grads;
}

double Graph::kink_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (const Node& n : nodes_) {
    if (!n.dynamic) continue;
    switch (n.op) {
      case Op::kAbs:
      case Op::kHinge: {
        const Tensor& ta = at(n.parents[0]).value;
        for (std::size_t i = 0; i < ta.size(); ++i) {
          margin = std::min(margin, static_cast<double>(std::fabs(ta[i])));
        }
        break;
      }
      case Op::kClamp: {
        const Tensor& ta = at(n.parents[0]).value;
        for (std::size_t i = 0; i < ta.size(); ++i) {
          margin = std::min(margin,
                            static_cast<double>(std::fabs(ta[i] - n.clamp_lo)));
          margin = std::min(margin,
                            static_cast<double>(std::fabs(ta[i] - n.clamp_hi)));
        }
        break;
      }
      case Op::kPixelMin: {
        if (n.parents.size() < 2) break;
        bool any_dynamic_parent = false;
        for (NodeId p : n.parents) {
          if (at(p).dynamic) any_dynamic_parent = true;
        }
        if (!any_dynamic_parent) break;
        for (std::size_t i = 0; i < n.value.size(); ++i) {
          const float m = n.value[i];
          for (NodeId p : n.parents) {
            const float v = at(p).value[i];
            if (v != m) margin = std::min(margin, static_cast<double>(v - m));
            // Equal non-winning operands sit exactly on the tie kink.
          }
          int winners = 0;
          for (NodeId p : n.parents) {
            if (at(p).value[i] == m) ++winners;
          }
          if (winners > 1) margin = 0.0;
        }
        break;
      }
      case Op::kBilinear: {
        for (int k = 1; k <= 2; ++k) {
          if (!at(n.parents[k]).dynamic) continue;
          const Tensor& tc = at(n.parents[k]).value;
          const Tensor& ts = at(n.parents[0]).value;
          const double limit = k == 1 ? ts.width() - 1 : ts.height() - 1;
          for (std::size_t i = 0; i < tc.size(); ++i) {
            const double x = tc[i];
            if (x < 0.0) {
              margin = std::min(margin, -x);
            } else if (x > limit) {
              margin = std::min(margin, x - limit);
            } else {
              const double fr = x - std::floor(x);
              margin = std::min(margin, std::min(fr, 1.0 - fr));
            }
          }
        }
        break;
      }
      default:
        break;
    }
  }
  return margin;
}

// ---------------------------------------------------------------------------
// Value operators

namespace {
Graph& same_graph(Value a, Value b) {
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument("Value operands belong to different graphs");
  }
  return a.graph();
}
}  // namespace

Value operator+(Value a, Value b) {
  Graph& g = same_graph(a, b);
  return {&g, g.add(a.id(), b.id())};
}
Value operator-(Value a, Value b) {
  Graph& g = same_graph(a, b);
  return {&g, g.sub(a.id(), b.id())};
}
Value operator*(Value a, Value b) {
  Graph& g = same_graph(a, b);
  return {&g, g.mul(a.id(), b.id())};
}
Value operator/(Value a, Value b) {
  Graph& g = same_graph(a, b);
  return {&g, g.div(a.id(), b.id())};
}
Value operator-(Value a) { return {&a.graph(), a.graph().neg(a.id())}; }
Value operator+(Value a, double s) {
  Graph& g = a.graph();
  return {&g, g.add(a.id(), g.constant_scalar(s))};
}
Value operator-(Value a, double s) { return a + (-s); }
Value operator*(Value a, double s) {
  Graph& g = a.graph();
  return {&g, g.scale(a.id(), static_cast<float>(s))};
}

Value abs(Value a) { return {&a.graph(), a.graph().abs(a.id())}; }
Value log(Value a) { return {&a.graph(), a.graph().log(a.id())}; }
Value hinge(Value a) { return {&a.graph(), a.graph().hinge(a.id())}; }
Value sigmoid(Value a) { return {&a.graph(), a.graph().sigmoid(a.id())}; }
Value clamp(Value a, float lo, float hi) {
  return {&a.graph(), a.graph().clamp(a.id(), lo, hi)};
}
Value channel_mean(Value a) {
  return {&a.graph(), a.graph().channel_mean(a.id())};
}
Value mean(Value a) { return {&a.graph(), a.graph().mean(a.id())}; }
Value masked_mean(Value a, const Tensor& mask) {
  return {&a.graph(), a.graph().masked_mean(a.id(), mask)};
}
Value box_filter3(Value a) {
  return {&a.graph(), a.graph().box_filter3(a.id())};
}
Value bilinear(Value src, Value u, Value v) {
  Graph& g = same_graph(src, u);
  same_graph(u, v);
  return {&g, g.bilinear(src.id(), u.id(), v.id())};
}
Value select(const Tensor& mask, Value on_one, Value on_zero) {
  Graph& g = same_graph(on_one, on_zero);
  return {&g, g.select(mask, on_one.id(), on_zero.id())};
}
Value pixel_min(std::span<const Value> operands) {
  if (operands.empty()) {
    throw std::invalid_argument("pixel_min: empty operand list");
  }
  Graph& g = operands.front().graph();
  std::vector<NodeId> ids;
  ids.reserve(operands.size());
  for (const Value& v : operands) {
    same_graph(operands.front(), v);
    ids.push_back(v.id());
  }
  return {&g, g.pixel_min(ids)};
}

// ---------------------------------------------------------------------------

FiniteDiffReport finite_diff_check(
    const std::function<double(const Tensor&)>& fn, const Tensor& analytic,
    const Tensor& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step <= 0");
  if (!analytic.same_shape(point)) {
    throw std::invalid_argument("finite_diff_check: gradient shape " +
                                analytic.shape_string() + " vs point " +
                                point.shape_string());
  }
  FiniteDiffReport report;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const float x = point[i];
    const float xp = static_cast<float>(x + step);
    const float xm = static_cast<float>(x - step);
    probe[i] = xp;
    const double fp = fn(probe);
    probe[i] = xm;
    const double fm = fn(probe);
    probe[i] = x;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      report.finite = false;
      report.worst_coord = static_cast<std::ptrdiff_t>(i);
      report.max_rel_error = std::numeric_limits<double>::infinity();
      return report;
    }
    // Divide by the actually-representable step so float quantization of
    // the probe point cancels out.
    const double cd = (fp - fm) / (static_cast<double>(xp) - xm);
    const double rel = std::fabs(analytic[i] - cd) /
                       std::max(1e-8, std::fabs(cd));
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coord = static_cast<std::ptrdiff_t>(i);
    }
  }
  return report;
}

}  // namespace refldepth::diff
