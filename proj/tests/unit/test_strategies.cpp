#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "clb/core/errors.hpp"
#include "clb/core/rng.hpp"
#include "clb/data/synthetic.hpp"
#include "clb/strategies/penalties.hpp"
#include "clb/strategies/replay_buffer.hpp"
#include "clb/strategies/strategy.hpp"
#include "doctest.h"

using namespace clb;

namespace {

ParameterSet<double> single(std::vector<double> values) {
  ParameterSet<double> p;
  const std::size_t n = values.size();
  Tensor<double> t({n}, std::move(values));
  t.set_requires_grad(true);
  p.add("theta", t);
  return p;
}

struct Fixture {
  explicit Fixture(std::size_t per_class = 12, Scenario s = Scenario::ClassIL)
      : data(make_data(per_class)),
        units(split_by_classes(data, iota_indices(8), s)),
        model(data.train.shape, 8, 3),
        adam(model.parameters()),
        ctx{model, adam,        AdamConfig{}, data, units, s, 8, 2, false, AugmentOptions{}, strategy_rng, generator_rng,
            augment_rng, owners(units)} {}
  static std::vector<std::size_t> owners(const std::vector<Unit>& units) {
    std::vector<std::size_t> out(8, 0);
    for (std::size_t u = 0; u < units.size(); ++u) {
      for (std::size_t k : units[u].classes) out[k] = u;
    }
    return out;
  }
  static DatasetPair make_data(std::size_t per_class) {
    SyntheticSpec spec;
    spec.train_per_class = per_class;
    spec.test_per_class = 2;
    return gen_synthetic(spec);
  }
  DatasetPair data;
  std::vector<Unit> units;
  LeNet<Real> model;
  AdamState<Real> adam;
  Rng strategy_rng{1}, generator_rng{2}, augment_rng{3};
  TrainContext ctx;
};

}  // namespace

TEST_CASE("fisher of a one-weight logistic model matches the closed form") {
  // logits [a x, b x] with label 0: d/da -log p0 = -(1 - p0) x, d/db = (1 - p0) x.
  const std::vector<double> xs{0.7, -1.3};
  const double a = 0.4, b = -0.2;
  ParameterSet<double> params;
  Tensor<double> w({1, 2}, {a, b});
  w.set_requires_grad(true);
  params.add("w", w);
  const Tensor<double> zero_bias({2}, {0.0, 0.0});
  const auto fisher = estimate_fisher<double>(params, xs.size(), [&](std::size_t i) {
    const Tensor<double> x({1, 1}, {xs[i]});
    const std::vector<double> target{1.0, 0.0};
    return softmax_cross_entropy<double>(dense(x, w, zero_bias), target, {}, {});
  });
  double expect = 0;
  for (double x : xs) {
    const double p0 = 1.0 / (1.0 + std::exp((b - a) * x));
    expect += std::pow((1.0 - p0) * x, 2) / static_cast<double>(xs.size());
  }
  CHECK(fisher[0][0] == doctest::Approx(expect).epsilon(1e-9));
  CHECK(fisher[0][1] == doctest::Approx(expect).epsilon(1e-9));
  CHECK(std::abs(fisher[0][0] - expect) < 1e-6);
}

TEST_CASE("fisher entries are non-negative and zero for unused parameters") {
  ParameterSet<double> params;
  Tensor<double> used({3, 2}, {0.5, -1.0, 2.0, 0.1, 0.0, 0.3}), unused({2}, {1.0, 1.0});
  used.set_requires_grad(true);
  unused.set_requires_grad(true);
  params.add("used", used);
  params.add("unused", unused);
  Rng rng(5);
  std::vector<double> xs(30);
  for (auto& x : xs) x = rng.normal();
  const Tensor<double> zero_bias({2}, {0.0, 0.0});
  const auto fisher = estimate_fisher<double>(params, xs.size(), [&](std::size_t i) {
    // The middle input is always 0, so its weights never see a gradient.
    const Tensor<double> x({1, 3}, {xs[i], 0.0, 1.0});
    const std::vector<double> target{0.0, 1.0};
    return softmax_cross_entropy<double>(dense(x, used, zero_bias), target, {}, {});
  });
  for (double v : fisher[0]) CHECK(v >= 0.0);
  CHECK(fisher[0][0] > 0.0);
  CHECK(fisher[0][2] == 0.0);
  CHECK(fisher[0][3] == 0.0);
  CHECK(fisher[1][0] == 0.0);
  CHECK(fisher[1][1] == 0.0);
  CHECK_THROWS_AS(estimate_fisher<double>(params, 0, [](std::size_t) { return Tensor<double>::scalar(0.0); }),
                  ArgumentError);
}

TEST_CASE("ewc penalty examples and gradient") {
  auto p = single({4.0});
  QuadraticAnchor<double> t{{{1.0}}, {{1.0}}};
  CHECK(ewc_penalty<double>(p, {t}, 2.0) == doctest::Approx(9.0));
  auto at = single({1.0});
  CHECK(ewc_penalty<double>(at, {t}, 2.0) == 0.0);

  // Two tasks, random values: analytic gradient against central differences.
  Rng rng(11);
  std::vector<double> theta(6);
  for (auto& v : theta) v = rng.normal();
  std::vector<QuadraticAnchor<double>> tasks(2);
  for (auto& task : tasks) {
    task.weight.assign(1, std::vector<double>(6));
    task.center.assign(1, std::vector<double>(6));
    for (auto& v : task.weight[0]) v = rng.uniform();
    for (auto& v : task.center[0]) v = rng.normal();
  }
  auto params = single(theta);
  params.zero_grad();
  params[0].tensor.grad();
  const double lambda = 3.5;
  ewc_penalty<double>(params, tasks, lambda, true);
  const auto g = params[0].tensor.grad();
  for (std::size_t i = 0; i < 6; ++i) {
    auto up = theta, down = theta;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double fd = (ewc_penalty<double>(single(up), tasks, lambda) - ewc_penalty<double>(single(down), tasks, lambda)) / 2e-6;
    CHECK(g[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("online fisher running sum") {
  ParamSlots<double> running;
  const ParamSlots<double> f{{1.0, 2.0}};
  ewc_online_update(running, f, 1.0);
  CHECK(running == f);
  ewc_online_update(running, f, 0.0);
  CHECK(running == f);
  ParamSlots<double> sum;
  const ParamSlots<double> ones{{1.0}};
  for (int t = 0; t < 3; ++t) ewc_online_update(sum, ones, 1.0);
  CHECK(sum[0][0] == 3.0);
  ParamSlots<double> decay{{4.0}};
  ewc_online_update(decay, ones, 0.5);
  CHECK(decay[0][0] == 3.0);
}

TEST_CASE("si path integral and penalty examples") {
  ParamSlots<double> path{{0.0, 0.0}};
  si_accumulate(path, ParamSlots<double>{{2.0, 5.0}}, ParamSlots<double>{{-0.1, 0.0}});
  CHECK(path[0][0] == doctest::Approx(0.2));
  CHECK(path[0][1] == 0.0);

  auto params = single({0.0});
  SiState<double> st(params, 0.1);
  CHECK(si_penalty(params, st, 1.0) == 0.0);
  st.importance = {{2.0}};
  st.anchor = {{0.5}};
  st.has_anchor = true;
  CHECK(si_penalty(params, st, 1.0) == doctest::Approx(0.5));
  auto at = single({0.5});
  CHECK(si_penalty(at, st, 1.0) == 0.0);
  st.importance = {{0.0}};
  CHECK(si_penalty(params, st, 1.0) == 0.0);
}

TEST_CASE("si consolidation divides the path by squared travel plus damping") {
  auto params = single({1.0, 2.0});
  SiState<double> st(params, 0.1);
  st.path = {{0.3, -0.2}};
  params[0].tensor.buffer() = {1.5, 2.0};
  si_consolidate(st, params);
  CHECK(st.importance[0][0] == doctest::Approx(0.3 / (0.25 + 0.1)));
  CHECK(st.importance[0][1] == doctest::Approx(-0.2 / 0.1));
  CHECK(st.path[0][0] == 0.0);
  CHECK(st.anchor[0] == std::vector<double>{1.5, 2.0});
  CHECK(st.start[0] == std::vector<double>{1.5, 2.0});
  CHECK(st.has_anchor);
}

TEST_CASE("a-gem projection examples") {
  const std::vector<double> g1{1, 1}, ref{1, 0}, g2{-1, 1};
  CHECK(agem_project<double>(g1, ref) == g1);
  const auto p = agem_project<double>(g2, ref);
  CHECK(p[0] == doctest::Approx(0.0));
  CHECK(p[1] == doctest::Approx(1.0));
  bool degenerate = false;
  const std::vector<double> zero{0, 0};
  CHECK(agem_project<double>(g2, zero, &degenerate) == g2);
  CHECK(degenerate);
  CHECK_THROWS_AS(agem_project<double>(g1, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("a-gem projection never increases the reference loss to first order") {
  Rng rng(17);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.index(40);
    std::vector<float> g(n), r(n);
    for (auto& v : g) v = static_cast<float>(rng.normal());
    for (auto& v : r) v = static_cast<float>(rng.normal());
    const auto p = agem_project<float>(g, r);
    double dot = 0, dot0 = 0, rr = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dot += static_cast<double>(p[i]) * r[i];
      dot0 += static_cast<double>(g[i]) * r[i];
      rr += static_cast<double>(r[i]) * r[i];
    }
    CHECK(dot >= -1e-5 * rr);
    if (dot0 >= 0) CHECK(p == g);
  }
}

TEST_CASE("distillation targets and the Gibbs minimum") {
  const Tensor<double> equal({1, 4}, {0.3, 0.3, 0.3, 0.3});
  for (double t : distill_targets(equal, 2.0)) CHECK(t == doctest::Approx(0.25));

  const Tensor<double> teacher({2, 3}, {1.0, -0.5, 2.0, 0.0, 0.4, -1.0});
  const double T = 2.0;
  const auto y = distill_targets(teacher, T);
  double entropy = 0;
  for (double v : y) entropy -= v * std::log(v);
  entropy /= 2.0;
  const double at_teacher = distill_loss<double>(teacher, y, T).item();
  CHECK(at_teacher == doctest::Approx(T * T * entropy).epsilon(1e-12));
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    Tensor<double> student({2, 3});
    for (std::size_t i = 0; i < 6; ++i) student[i] = teacher[i] + 0.5 * rng.normal();
    CHECK(distill_loss<double>(student, y, T).item() >= at_teacher - 1e-12);
  }
  // T = 1 is plain soft-target cross-entropy.
  const auto y1 = distill_targets(teacher, 1.0);
  CHECK(distill_loss<double>(teacher, y1, 1.0).item() ==
        doctest::Approx(softmax_cross_entropy<double>(teacher, y1, {}, {}).item()).epsilon(1e-12));
  CHECK_THROWS_AS(distill_targets(teacher, 0.0), ArgumentError);
}

TEST_CASE("masked distillation ignores classes outside the mask") {
  const Tensor<double> teacher({1, 4}, {1.0, 9.0, -0.5, 9.0});
  const ClassMask mask{1, 0, 1, 0};
  const auto y = distill_targets(teacher, 2.0, mask);
  CHECK(y[1] == 0.0);
  CHECK(y[3] == 0.0);
  CHECK(y[0] + y[2] == doctest::Approx(1.0));
  Tensor<double> other = teacher;
  other = Tensor<double>({1, 4}, {1.0, -30.0, -0.5, 4.0});
  CHECK(distill_loss<double>(teacher, y, 2.0, mask).item() ==
        doctest::Approx(distill_loss<double>(other, y, 2.0, mask).item()));
}

TEST_CASE("replay buffer stays class-balanced for any insertion order") {
  Rng rng(23);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 2 + rng.index(7);
    const std::size_t cap = k + rng.index(60);
    ReplayBuffer buf(cap, 1);
    // Every class supplies at least `cap` items, in a random interleaving.
    std::vector<std::size_t> stream;
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t n = cap + rng.index(2 * cap);
      stream.insert(stream.end(), n, c);
    }
    if (trial % 2) {
      rng.shuffle(stream);
    }
    for (std::size_t label : stream) {
      const float v = static_cast<float>(label);
      buf.insert(std::span<const float>(&v, 1), label, rng);
    }
    CHECK(buf.size() == cap);
    const auto counts = buf.class_counts();
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*hi - *lo <= 1);
    for (std::size_t s = 0; s < buf.size(); ++s) CHECK(buf.item(s)[0] == static_cast<float>(buf.label(s)));
  }
}

TEST_CASE("replay buffer keeps everything until full and short classes whole") {
  Rng rng(2);
  ReplayBuffer buf(1000, 2);
  std::vector<float> item{0, 0};
  for (std::size_t c = 0; c < 4; ++c) {
    for (int n = 0; n < 400; ++n) buf.insert(item, c, rng);
  }
  CHECK(buf.class_counts() == std::vector<std::size_t>{250, 250, 250, 250});

  ReplayBuffer small(10, 1);
  std::vector<float> one{1};
  for (int n = 0; n < 7; ++n) small.insert(one, 0, rng);
  CHECK(small.size() == 7);
  for (int n = 0; n < 2; ++n) small.insert(one, 1, rng);
  for (int n = 0; n < 30; ++n) small.insert(one, 2, rng);
  const auto counts = small.class_counts();
  CHECK(counts[1] == 2);
  CHECK(counts[0] + counts[1] + counts[2] == 10);
  CHECK(std::max(counts[0], counts[2]) - std::min(counts[0], counts[2]) <= 1);
}

TEST_CASE("replay buffer sampling is seeded and without replacement") {
  Rng fill(1);
  ReplayBuffer buf(20, 1);
  for (int n = 0; n < 20; ++n) {
    const float v = static_cast<float>(n);
    buf.insert(std::span<const float>(&v, 1), static_cast<std::size_t>(n % 4), fill);
  }
  Rng a(9), b(9);
  const auto sa = buf.sample(15, a), sb = buf.sample(15, b);
  CHECK(sa == sb);
  CHECK(std::set<std::size_t>(sa.begin(), sa.end()).size() == 15);
  Rng c(4);
  CHECK(buf.sample(45, c).size() == 45);
  ReplayBuffer empty(5, 1);
  CHECK_THROWS_AS(empty.sample(1, c), ArgumentError);
  CHECK_THROWS_AS(ReplayBuffer(0, 1), ArgumentError);
}

TEST_CASE("strategy catalogue") {
  const auto& cat = strategy_catalogue();
  CHECK(cat.size() == 13);
  std::set<std::string> names;
  for (const auto& s : cat) names.insert(s.name);
  CHECK(names.size() == 13);
  for (const char* n : {"lb", "ub", "ewc", "ewc-online", "si", "lwf", "nr", "agem", "lr", "dgr", "dgr-d", "lgr", "lgr-d"}) {
    CHECK(names.count(n) == 1);
    CHECK(make_strategy(n, {})->name() == n);
  }
  auto find = [&](const std::string& n) {
    return *std::find_if(cat.begin(), cat.end(), [&](const StrategyInfo& s) { return s.name == n; });
  };
  CHECK(find("ewc").defaults.find("5000") != std::string::npos);
  CHECK(find("agem").defaults.find("2000") != std::string::npos);
  CHECK(find("lb").family == Family::Baseline);
  CHECK(find("si").family == Family::Regularisation);
  CHECK(find("lgr-d").family == Family::Replay);
  CHECK_THROWS_AS(make_strategy("gem", {}), ArgumentError);
  const StrategyConfig c;
  CHECK(c.nr_buffer_for(Scenario::TaskIL) == 1500);
  CHECK(c.nr_buffer_for(Scenario::ClassIL) == 1000);
  CHECK(c.ewc_lambda == 5000.0);
  CHECK(c.si_c == 1.0);
  CHECK(c.lwf_lambda_o == 1.0);
  CHECK(c.lwf_weight_decay == 5e-4);
}

TEST_CASE("context masks follow the scenario") {
  Fixture task(4, Scenario::TaskIL);
  CHECK(task.ctx.unit_mask(1) == ClassMask{0, 0, 1, 1, 0, 0, 0, 0});
  const std::vector<std::size_t> labels{0, 5};
  const auto rows = task.ctx.row_masks(labels);
  CHECK(rows.size() == 16);
  CHECK(std::vector<std::uint8_t>(rows.begin(), rows.begin() + 8) == ClassMask{1, 1, 0, 0, 0, 0, 0, 0});
  CHECK(std::vector<std::uint8_t>(rows.begin() + 8, rows.end()) == ClassMask{0, 0, 0, 0, 1, 1, 0, 0});
  CHECK(task.ctx.classes_before(2) == std::vector<std::size_t>{0, 1, 2, 3});
  Fixture cls(4, Scenario::ClassIL);
  CHECK(cls.ctx.row_masks(labels).empty());
  CHECK(cls.ctx.classes_before(3) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("naive rehearsal mixes half new, half replayed") {
  Fixture f(12);
  StrategyConfig cfg;
  cfg.nr_buffer = 30;
  auto nr = make_strategy("nr", cfg);
  f.ctx.batch_size = 9;
  nr->begin_unit(f.ctx, 0);
  CHECK(nr->new_batch_size(f.ctx, 0) == 9);
  std::vector<std::size_t> batch(f.units[0].train_indices.begin(), f.units[0].train_indices.begin() + 9);
  nr->train_step(f.ctx, 0, batch);
  nr->end_unit(f.ctx, 0);
  nr->begin_unit(f.ctx, 1);
  CHECK(nr->new_batch_size(f.ctx, 1) == 5);
}

TEST_CASE("latent replay freezes the root after the first unit") {
  Fixture f(12);
  auto lr = make_strategy("lr", {});
  lr->begin_unit(f.ctx, 0);
  std::vector<std::size_t> batch(f.units[0].train_indices.begin(), f.units[0].train_indices.begin() + 8);
  lr->train_step(f.ctx, 0, batch);
  lr->end_unit(f.ctx, 0);
  CHECK(f.model.root_frozen());
  lr->begin_unit(f.ctx, 1);
  const auto root_before = f.model.root_parameters().snapshot();
  const auto head_before = f.model.head_parameters().snapshot();
  std::vector<std::size_t> next(f.units[1].train_indices.begin(), f.units[1].train_indices.begin() + 4);
  lr->train_step(f.ctx, 1, next);
  CHECK(f.model.root_parameters().snapshot() == root_before);
  CHECK(f.model.head_parameters().snapshot() != head_before);
}

TEST_CASE("ewc with lambda 0 and si with c 0 take the fine-tuning update") {
  for (const std::string name : {"ewc", "si", "ewc-online"}) {
    Fixture a(6), b(6);
    StrategyConfig cfg;
    cfg.ewc_lambda = 0;
    cfg.ewc_online_lambda = 0;
    cfg.si_c = 0;
    auto s = make_strategy(name, cfg), lb = make_strategy("lb", {});
    for (std::size_t u = 0; u < 2; ++u) {
      s->begin_unit(a.ctx, u);
      lb->begin_unit(b.ctx, u);
      for (int step = 0; step < 2; ++step) {
        std::vector<std::size_t> batch(a.units[u].train_indices.begin(), a.units[u].train_indices.begin() + 4);
        s->train_step(a.ctx, u, batch);
        lb->train_step(b.ctx, u, batch);
      }
      s->end_unit(a.ctx, u);
      lb->end_unit(b.ctx, u);
    }
    CHECK(a.model.parameters().snapshot() == b.model.parameters().snapshot());
  }
}

TEST_CASE("generative replay needs a trained generator") {
  Fixture f(6);
  auto dgr = make_strategy("dgr", {});
  CHECK_THROWS_AS(dgr->begin_unit(f.ctx, 1), ArgumentError);
}

TEST_CASE("a-gem reports degenerate references") {
  CHECK(make_strategy("agem", {})->warnings().empty());
}
