#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "mirrams/graph.hpp"
#include "mirrams/rng.hpp"
#include "support.hpp"

using namespace mirrams;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

// Gradchecks one op: builds sum(w .* op(inputs)) with fixed pseudo-random
// readout weights and compares analytic grads of every input coordinate to
// central differences.
struct OpCheck {
  std::vector<Tensor> inputs;
  std::function<int(Graph&, const std::vector<int>&)> build;
  Tensor w;

  double eval(std::vector<Tensor>* analytic) {
    Graph g;
    std::vector<int> ids;
    for (auto& t : inputs) {
      t.requires_grad = true;
      ids.push_back(g.leaf(t));
    }
    const int node = build(g, ids);
    if (w.empty()) {
      Rng wr(7711);
      w = Tensor(g.value(node).shape());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.25 + wr.uniform();
    }
    const int loss = g.sum_all(g.cmul(node, w));
    const double v = g.value(loss).item();
    if (analytic) {
      g.backward(loss);
      analytic->clear();
      for (int id : ids) analytic->push_back(g.grad_or_zero(id));
    }
    return v;
  }

  void run(double tol = 1e-4) {
    std::vector<Tensor> an;
    eval(&an);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto st = testsup::compare_grads([&] { return eval(nullptr); }, inputs[k], an[k]);
      CAPTURE(k);
      CHECK(st.checked == inputs[k].size());
      CHECK(st.worst_rel < tol);
    }
  }
};

}  // namespace

TEST_CASE("graph: forward value oracles") {
  Graph g;
  const int a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  const int b = g.constant(Tensor({2, 1}, {5, 6}));

  SUBCASE("matmul") {
    const int m = g.matmul(a, b);
    CHECK(g.value(m).shape() == Shape{2, 1});
    CHECK(g.value(m)[0] == 17.0);
    CHECK(g.value(m)[1] == 39.0);
  }
  SUBCASE("add with row broadcast") {
    const int r = g.constant(Tensor::row({10, 20}));
    const int s = g.add(a, r);
    CHECK(g.value(s)[0] == 11.0);
    CHECK(g.value(s)[3] == 24.0);
  }
  SUBCASE("scale, relu, gelu, log") {
    const int x = g.constant(Tensor({1, 4}, {-2, -0.5, 0.0, 1.0}));
    const int rl = g.relu(x);
    CHECK(g.value(rl)[0] == 0.0);
    CHECK(g.value(rl)[3] == 1.0);
    const int sc = g.scale(x, -2.0);
    CHECK(g.value(sc)[0] == 4.0);
    const int ge = g.gelu(x);
    CHECK(g.value(ge)[2] == 0.0);
    CHECK(g.value(ge)[3] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    const int lg = g.log(g.constant(Tensor({1, 2}, {1.0, std::exp(1.0)})));
    CHECK(g.value(lg)[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(g.value(lg)[1] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("softmax of [1,2]") {
    const int x = g.constant(Tensor({1, 2}, {1, 2}));
    const int sm = g.softmax_last(x);
    CHECK(g.value(sm)[0] == doctest::Approx(0.26894142136999512).epsilon(1e-12));
    CHECK(g.value(sm)[1] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  }
  SUBCASE("cross entropy rows") {
    const int x = g.constant(Tensor({2, 3}, {2, -1, 0.5, 0, 0, 0}));
    const int nll = g.log_softmax_nll(x, {0, 1});
    CHECK(g.value(nll).shape() == Shape{2, 1});
    CHECK(g.value(nll)[0] == doctest::Approx(0.24131129665715706).epsilon(1e-12));
    CHECK(g.value(nll)[1] == doctest::Approx(1.0986122886681098).epsilon(1e-12));
  }
  SUBCASE("single-head attention on two tokens") {
    // q = k = v = [[1],[2]]: out_t = softmax([t*1, t*2]) . [1,2]
    const int q = g.constant(Tensor({1, 2, 1}, {1, 2}));
    const int at = g.attention(q, q, q, 1);
    CHECK(g.value(at).shape() == Shape{1, 2, 1});
    CHECK(g.value(at)[0] == doctest::Approx(1.7310585786300048).epsilon(1e-12));
    CHECK(g.value(at)[1] == doctest::Approx(1.8807970779778824).epsilon(1e-12));
  }
  SUBCASE("reductions and structure") {
    const int mr = g.mean_rows(a);
    CHECK(g.value(mr).shape() == Shape{1, 2});
    CHECK(g.value(mr)[0] == 2.0);
    CHECK(g.value(mr)[1] == 3.0);
    const int sa = g.sum_all(a);
    CHECK(g.value(sa).item() == 10.0);
    const int rr = g.repeat_row(g.constant(Tensor::row({4, 5})), 3);
    CHECK(g.value(rr).shape() == Shape{3, 2});
    CHECK(g.value(rr)[4] == 4.0);
  }
}

TEST_CASE("graph: rowmax breaks ties toward the lowest index") {
  Graph g;
  const int x = g.constant(Tensor({2, 3}, {1, 3, 3, 2, 2, 1}));
  std::vector<std::int32_t> arg;
  const int mx = g.rowmax(x, &arg);
  CHECK(g.value(mx)[0] == 3.0);
  CHECK(g.value(mx)[1] == 2.0);
  CHECK(arg == std::vector<std::int32_t>{1, 0});
}

TEST_CASE("graph: layer_norm standardizes the last axis") {
  Graph g;
  const int x = g.constant(Tensor({2, 4}, {1, 2, 3, 4, -1, 0, 1, 2}));
  const int gamma = g.constant(Tensor::row({1, 1, 1, 1}));
  const int beta = g.constant(Tensor::row({0, 0, 0, 0}));
  const int ln = g.layer_norm(x, gamma, beta);
  for (std::size_t r = 0; r < 2; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 4; ++c) mean += g.value(ln).at(r, c);
    mean /= 4;
    for (std::size_t c = 0; c < 4; ++c) {
      const double d = g.value(ln).at(r, c) - mean;
      var += d * d;
    }
    var /= 4;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // norm eps shifts it slightly
  }
}

TEST_CASE("graph: select_rows and gather_rows pick the right data") {
  Graph g;
  const int a = g.constant(Tensor({2, 2}, {1, 1, 2, 2}));
  const int b = g.constant(Tensor({2, 2}, {9, 9, 8, 8}));
  const int sel = g.select_rows({1, 0}, a, b);
  CHECK(g.value(sel)[0] == 1.0);
  CHECK(g.value(sel)[2] == 8.0);

  const int table = g.constant(Tensor({3, 2}, {0, 0, 10, 11, 20, 21}));
  const int got = g.gather_rows(table, {2, 0, 2});
  CHECK(g.value(got).shape() == Shape{3, 2});
  CHECK(g.value(got)[0] == 20.0);
  CHECK(g.value(got)[2] == 0.0);
  CHECK(g.value(got)[4] == 20.0);
}

TEST_CASE("graph: concat/slice/stack round trips") {
  Graph g;
  const int a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  const int b = g.constant(Tensor({2, 3}, {5, 6, 7, 8, 9, 10}));
  const int cat = g.concat_last({a, b});
  CHECK(g.value(cat).shape() == Shape{2, 5});
  CHECK(g.value(cat)[2] == 5.0);
  const int back = g.slice_last(cat, 2, 3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(g.value(back)[i] == g.value(b)[i]);

  const int st = g.stack_tokens({a, a});
  CHECK(g.value(st).shape() == Shape{2, 2, 2});
  const int tk = g.slice_tokens(st, 1, 2);
  CHECK(g.value(tk).shape() == Shape{2, 1, 2});
  CHECK(g.value(tk)[0] == 1.0);
  CHECK(g.value(tk)[3] == 4.0);
}

TEST_CASE("graph: shape violations raise TensorError") {
  Graph g;
  const int a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  const int b = g.constant(Tensor({1, 3}, {1, 2, 3}));
  CHECK_THROWS_AS(g.add(a, b), TensorError);
  CHECK_THROWS_AS(g.matmul(a, b), TensorError);
  CHECK_THROWS_AS(g.slice_last(a, 1, 4), TensorError);
  CHECK_THROWS_AS(g.gather_rows(a, {5}), TensorError);
  CHECK_THROWS_AS(g.log_softmax_nll(a, {0}), TensorError);
  CHECK_THROWS_AS(g.log_softmax_nll(a, {0, 7}), TensorError);
}

TEST_CASE("graph: backward is re-runnable with identical gradients") {
  Rng rng(5);
  Tensor x = rand_tensor({3, 4}, rng);
  x.requires_grad = true;
  Graph g;
  const int id = g.leaf(x);
  const int loss = g.sum_all(g.gelu(id));
  g.backward(loss);
  const Tensor g1 = g.grad(id);
  g.backward(loss);
  const Tensor g2 = g.grad(id);
  REQUIRE(g1.size() == g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("graph: constants are not differentiated") {
  Graph g;
  Tensor lv({1, 2}, {3, 4});
  lv.requires_grad = true;
  const int a = g.leaf(lv);
  const int c = g.constant(Tensor({1, 2}, {1, 2}));
  const int loss = g.sum_all(g.add(a, c));
  g.backward(loss);
  CHECK(g.reached(a));
  CHECK_FALSE(g.reached(c));
  const Tensor z = g.grad_or_zero(c);
  CHECK(z.size() == 2);
  CHECK(z[0] == 0.0);
  CHECK_THROWS_AS((void)g.grad(c), TensorError);

  // a loss built purely from constants has nothing to differentiate
  Graph g2;
  const int c2 = g2.constant(Tensor({1, 2}, {1, 2}));
  CHECK_THROWS_AS(g2.backward(g2.sum_all(c2)), TensorError);
}

TEST_CASE("graph: gradcheck add (same shape and row broadcast)") {
  Rng rng(11);
  OpCheck oc;
  oc.inputs = {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)};
  oc.build = [](Graph& g, const std::vector<int>& id) { return g.add(id[0], id[1]); };
  oc.run();

  OpCheck bc;
  bc.inputs = {rand_tensor({3, 4}, rng), rand_tensor({1, 4}, rng)};
  bc.build = [](Graph& g, const std::vector<int>& id) { return g.add(id[0], id[1]); };
  bc.run();
}

TEST_CASE("graph: gradcheck scale and cmul") {
  Rng rng(12);
  OpCheck oc;
  oc.inputs = {rand_tensor({2, 5}, rng)};
  oc.build = [](Graph& g, const std::vector<int>& id) { return g.scale(id[0], -1.75); };
  oc.run();

  OpCheck cm;
  cm.inputs = {rand_tensor({4, 3}, rng)};
  cm.build = [&](Graph& g, const std::vector<int>& id) {
    return g.cmul(id[0], Tensor({4, 3}, {1, -2, 0.5, 2, 1, -1, 0.25, 3, -0.5, 1, 1, 2}));
  };
  cm.run();

  OpCheck cmcol;  // (rows,1) column broadcast
  cmcol.inputs = {rand_tensor({3, 4}, rng)};
  cmcol.build = [&](Graph& g, const std::vector<int>& id) {
    return g.cmul(id[0], Tensor({3, 1}, {2, -1, 0.5}));
  };
  cmcol.run();
}

TEST_CASE("graph: gradcheck relu away from the kink") {
  Rng rng(13);
  Tensor x = rand_tensor({3, 5}, rng);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) < 0.05) x[i] = 0.1;  // keep central differences off the kink
  OpCheck oc;
  oc.inputs = {x};
  oc.build = [](Graph& g, const std::vector<int>& id) { return g.relu(id[0]); };
  oc.run();
}

TEST_CASE("graph: gradcheck gelu and log") {
  Rng rng(14);
  OpCheck oc;
  oc.inputs = {rand_tensor({3, 5}, rng, -2, 2)};
  oc.build = [](Graph& g, const std::vector<int>& id) { return g.gelu(id[0]); };
  oc.run();

  OpCheck lg;
  lg.inputs = {rand_tensor({2, 6}, rng, 0.2, 3.0)};
  lg.build = [](Graph& g, const std::vector<int>& id) { return g.log(id[0]); };
  lg.run();
}

TEST_CASE("graph: gradcheck concat, slice, stack, token slice, repeat") {
  Rng rng(15);
  OpCheck oc;
  oc.inputs = {rand_tensor({2, 3}, rng), rand_tensor({2, 2}, rng)};
  oc.build = [](Graph& g, const std::vector<int>& id) { return g.concat_last({id[0], id[1]}); };
  oc.run();

  OpCheck sl;
  sl.inputs = {rand_tensor({3, 6}, rng)};
  sl.build = [](Graph& g, const std::vector<int>& id) { return g.slice_last(id[0], 2, 3); };
  sl.run();

  OpCheck st;
  st.inputs = {rand_tensor({2, 4}, rng), rand_tensor({2, 4}, rng), rand_tensor({2, 4}, rng)};
  st.build = [](Graph& g, const std::vector<int>& id) { return g.stack_tokens({id[0], id[1], id[2]}); };
  st.run();

  OpCheck tk;
  tk.inputs = {rand_tensor({2, 4, 3}, rng)};
  tk.build = [](Graph& g, const std::vector<int>& id) { return g.slice_tokens(id[0], 1, 3); };
  tk.run();

  OpCheck rp;
  rp.inputs = {rand_tensor({1, 5}, rng)};
  rp.build = [](Graph& g, const std::vector<int>& id) { return g.repeat_row(id[0], 4); };
  rp.run();
}

TEST_CASE("graph: gradcheck matmul (2d and leading-flattened 3d)") {
  Rng rng(16);
  OpCheck oc;
  oc.inputs = {rand_tensor({2, 3}, rng), rand_tensor({3, 4}, rng)};
  oc.build = [](Graph& g, const std::vector<int>& id) { return g.matmul(id[0], id[1]); };
  oc.run();

  OpCheck td;
  td.inputs = {rand_tensor({2, 2, 3}, rng), rand_tensor({3, 2}, rng)};
  td.build = [](Graph& g, const std::vector<int>& id) { return g.matmul(id[0], id[1]); };
  td.run();
}

TEST_CASE("graph: gradcheck gather_rows and select_rows") {
  Rng rng(17);
  OpCheck oc;
  oc.inputs = {rand_tensor({4, 3}, rng)};
  oc.build = [](Graph& g, const std::vector<int>& id) {
    return g.gather_rows(id[0], {0, 2, 2, 3, 1});
  };
  oc.run();

  OpCheck sel;
  sel.inputs = {rand_tensor({4, 3}, rng), rand_tensor({4, 3}, rng)};
  sel.build = [](Graph& g, const std::vector<int>& id) {
    return g.select_rows({1, 0, 0, 1}, id[0], id[1]);
  };
  sel.run();
}

TEST_CASE("graph: gradcheck mlp1h with both activations") {
  Rng rng(18);
  for (Activation act : {Activation::Relu, Activation::Gelu}) {
    OpCheck oc;
    oc.inputs = {rand_tensor({3, 4}, rng), rand_tensor({4, 5}, rng), rand_tensor({1, 5}, rng),
                 rand_tensor({5, 2}, rng), rand_tensor({1, 2}, rng)};
    if (act == Activation::Relu) {
      // keep hidden pre-activations clear of the relu kink
      for (std::size_t i = 0; i < oc.inputs[2].size(); ++i) oc.inputs[2][i] += 2.0;
    }
    oc.build = [act](Graph& g, const std::vector<int>& id) {
      return g.mlp1h(id[0], id[1], id[2], id[3], id[4], act);
    };
    oc.run();
  }
}

TEST_CASE("graph: gradcheck layer_norm") {
  Rng rng(19);
  OpCheck oc;
  oc.inputs = {rand_tensor({3, 6}, rng), rand_tensor({1, 6}, rng, 0.5, 1.5),
               rand_tensor({1, 6}, rng)};
  oc.build = [](Graph& g, const std::vector<int>& id) {
    return g.layer_norm(id[0], id[1], id[2]);
  };
  oc.run();
}

TEST_CASE("graph: gradcheck softmax and cross entropy") {
  Rng rng(20);
  OpCheck oc;
  oc.inputs = {rand_tensor({3, 4}, rng, -2, 2)};
  oc.build = [](Graph& g, const std::vector<int>& id) { return g.softmax_last(id[0]); };
  oc.run();

  OpCheck nll;
  nll.inputs = {rand_tensor({4, 3}, rng, -2, 2)};
  nll.build = [](Graph& g, const std::vector<int>& id) {
    return g.log_softmax_nll(id[0], {0, 2, 1, 2});
  };
  nll.run();
}

TEST_CASE("graph: gradcheck reductions and rowmax") {
  Rng rng(21);
  OpCheck oc;
  oc.inputs = {rand_tensor({4, 3}, rng)};
  oc.build = [](Graph& g, const std::vector<int>& id) { return g.mean_rows(id[0]); };
  oc.run();

  OpCheck rm;
  Tensor x = rand_tensor({3, 4}, rng);
  for (std::size_t r = 0; r < 3; ++r) x.at(r, r % 4) += 2.0;  // unique row maxima
  rm.inputs = {x};
  rm.build = [](Graph& g, const std::vector<int>& id) { return g.rowmax(id[0]); };
  rm.run();
}

TEST_CASE("graph: gradcheck attention with one and two heads") {
  Rng rng(22);
  for (std::size_t heads : {std::size_t{1}, std::size_t{2}}) {
    OpCheck oc;
    oc.inputs = {rand_tensor({2, 3, 4}, rng), rand_tensor({2, 3, 4}, rng),
                 rand_tensor({2, 3, 4}, rng)};
    oc.build = [heads](Graph& g, const std::vector<int>& id) {
      return g.attention(id[0], id[1], id[2], heads);
    };
    oc.run();
  }
}

TEST_CASE("graph: gradcheck attention at a generic head width") {
  // head width 3 exercises the non-templated kernel path
  Rng rng(23);
  OpCheck oc;
  oc.inputs = {rand_tensor({1, 4, 3}, rng), rand_tensor({1, 4, 3}, rng),
               rand_tensor({1, 4, 3}, rng)};
  oc.build = [](Graph& g, const std::vector<int>& id) {
    return g.attention(id[0], id[1], id[2], 1);
  };
  oc.run();
}
