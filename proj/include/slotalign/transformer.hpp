#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "slotalign/numkernel.hpp"

namespace slotalign {

// Binds a parameter to the graph: trainable when the graph records,
// a read-only constant otherwise.
template <typename T>
nk::Var bind(nk::Graph<T>& g, const nk::Param<T>& p) {
  // Recording graphs only exist inside training, which owns the model
  // mutably; the cast never applies to a frozen model.
  return g.recording() ? g.param(const_cast<nk::Param<T>&>(p)) : g.constant(p);
}

template <typename T>
struct Linear {
  nk::Param<T> w;
  nk::Param<T> b;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, nk::Rng& rng)
      : w(nk::uniform_weight<T>(name + ".w", in, out, rng)),
        b(nk::constant_param<T>(name + ".b", {out}, T(0))) {}

  nk::Var operator()(nk::Graph<T>& g, nk::Var x) const {
    return nk::linear(g, x, bind(g, w), bind(g, b));
  }

  template <typename F>
  void visit(F&& f) {
    f(w);
    f(b);
  }
};

template <typename T>
struct LayerNorm {
  nk::Param<T> gamma;
  nk::Param<T> beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t d)
      : gamma(nk::constant_param<T>(name + ".gamma", {d}, T(1))),
        beta(nk::constant_param<T>(name + ".beta", {d}, T(0))) {}

  nk::Var operator()(nk::Graph<T>& g, nk::Var x) const {
    return nk::layer_norm(g, x, bind(g, gamma), bind(g, beta));
  }

  template <typename F>
  void visit(F&& f) {
    f(gamma);
    f(beta);
  }
};

// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <typename T>
struct Block {
  LayerNorm<T> ln1, ln2;
  Linear<T> wq, wk, wv, wo;
  Linear<T> up, down;
  std::size_t n_heads = 1;
  bool rotary = false;

  Block() = default;
  Block(const std::string& name, std::size_t d, std::size_t heads, std::size_t ffn, nk::Rng& rng)
      : ln1(name + ".ln1", d),
        ln2(name + ".ln2", d),
        wq(name + ".wq", d, d, rng),
        wk(name + ".wk", d, d, rng),
        wv(name + ".wv", d, d, rng),
        wo(name + ".wo", d, d, rng),
        up(name + ".up", d, ffn, rng),
        down(name + ".down", ffn, d, rng),
        n_heads(heads) {}

  nk::Var operator()(nk::Graph<T>& g, nk::Var x, const nk::BoolMask& allow, std::size_t pos_offset = 0) const {
    nk::Var h = ln1(g, x);
    nk::Var q = wq(g, h), k = wk(g, h);
    if (rotary) {
      q = nk::rotary(g, q, n_heads, 10000.0, pos_offset);
      k = nk::rotary(g, k, n_heads, 10000.0, pos_offset);
    }
    nk::Var a = nk::attention(g, q, k, wv(g, h), allow, n_heads);
    x = nk::add(g, x, wo(g, a));
    nk::Var m = down(g, nk::gelu(g, up(g, ln2(g, x))));
    return nk::add(g, x, m);
  }

  template <typename F>
  void visit(F&& f) {
    ln1.visit(f);
    wq.visit(f);
    wk.visit(f);
    wv.visit(f);
    wo.visit(f);
    ln2.visit(f);
    up.visit(f);
    down.visit(f);
  }
};

}  // namespace slotalign
