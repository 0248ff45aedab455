#include "merlab/learners.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "fd_check.hpp"
#include "gem_oracle.hpp"
#include "merlab/streams.hpp"

using namespace merlab;

namespace {

SpecPtr small_spec() {
  return std::make_shared<NetworkSpec>(10, std::vector<int>{8}, 2);
}

NetworkSpec small_base() { return NetworkSpec(10, {8}, 2); }

TaskStream small_stream(int tasks = 3, int n = 40, std::uint64_t seed = 5) {
  StreamSpec spec;
  spec.kind = StreamKind::kSynthetic;
  spec.task_count = tasks;
  spec.train_per_task = n;
  spec.seed = seed;
  return make_synthetic(spec);
}

void run_stream(Learner& learner, const TaskStream& s) {
  for (int t = 0; t < s.task_count(); ++t)
    for (const Example& ex : s.train(t)) learner.step(ex);
}

LearnerConfig cfg_of(Algorithm a, double alpha = 0.05) {
  LearnerConfig c;
  c.algorithm = a;
  c.alpha = alpha;
  c.seed = 12;
  c.task_count = 3;
  c.buffer_capacity = 64;
  return c;
}

double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

}  // namespace

TEST_CASE("config validation") {
  LearnerConfig c;
  c.alpha = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.alpha = 0.1;
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.k = 1;
  c.beta = std::nan("");
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("online: alpha 0 is a no-op and loss decreases on repeats") {
  auto stream = small_stream();
  const Example& ex = stream.train(0)[0];

  OnlineLearner frozen(cfg_of(Algorithm::kOnline, 0.0), small_spec());
  ParamVector before = frozen.params();
  frozen.step(ex);
  CHECK(frozen.params().values == before.values);

  OnlineLearner learner(cfg_of(Algorithm::kOnline, 0.05), small_spec());
  const double l0 = loss_and_grad(learner.params(), ex).loss;
  learner.step(ex);
  const double l1 = loss_and_grad(learner.params(), ex).loss;
  learner.step(ex);
  const double l2 = loss_and_grad(learner.params(), ex).loss;
  CHECK(l1 < l0);
  CHECK(l2 < l1);
}

TEST_CASE("online step is definitionally sgd_step of loss_and_grad") {
  auto stream = small_stream();
  OnlineLearner learner(cfg_of(Algorithm::kOnline, 0.07), small_spec());
  for (const Example& ex : stream.train(0)) {
    ParamVector want =
        sgd_step(learner.params(), loss_and_grad(learner.params(), ex).grad, 0.07);
    learner.step(ex);
    REQUIRE(learner.params().values == want.values);
  }
}

TEST_CASE("every learner is deterministic given config and stream") {
  auto stream = small_stream();
  for (Algorithm a :
       {Algorithm::kOnline, Algorithm::kIndependent, Algorithm::kTaskInput,
        Algorithm::kEwc, Algorithm::kGem, Algorithm::kErReservoir,
        Algorithm::kErTasks, Algorithm::kMerA1, Algorithm::kMerObb,
        Algorithm::kMerCel}) {
    LearnerConfig c = cfg_of(a);
    c.s = 2;
    c.k = 3;
    c.ewc_lambda = 5.0;
    auto l1 = make_learner(c, small_base());
    auto l2 = make_learner(c, small_base());
    run_stream(*l1, stream);
    run_stream(*l2, stream);
    INFO(algorithm_name(a));
    REQUIRE(l1->params().values == l2->params().values);
  }
}

TEST_CASE("independent: isolation, T=1 degeneracy, cloning") {
  auto stream = small_stream();

  LearnerConfig c = cfg_of(Algorithm::kIndependent);
  IndependentLearner learner(c, small_base());
  ParamVector task1_before = learner.task_params(1);
  for (const Example& ex : stream.train(0)) learner.step(ex);
  CHECK(learner.task_params(1).values == task1_before.values);

  // T=1 reduces to online with full width
  LearnerConfig c1 = cfg_of(Algorithm::kIndependent);
  c1.task_count = 1;
  IndependentLearner ind(c1, small_base());
  OnlineLearner online(cfg_of(Algorithm::kOnline, c1.alpha), small_spec());
  auto single = small_stream(1, 60);
  for (const Example& ex : single.train(0)) {
    ind.step(ex);
    online.step(ex);
  }
  REQUIRE(ind.params().values == online.params().values);

  // clone-on-boundary: task 1 starts from task 0's final parameters
  LearnerConfig cc = cfg_of(Algorithm::kIndependent);
  cc.independent_clone = true;
  IndependentLearner cloner(cc, small_base());
  for (const Example& ex : stream.train(0)) cloner.step(ex);
  ParamVector task0_final = cloner.task_params(0);
  const Example& first1 = stream.train(1)[0];
  // replicate: cloned start, then one fused step
  ParamVector expect = task0_final;
  Workspace ws(std::make_shared<NetworkSpec>(*task0_final.spec));
  sgd_train_step(expect, first1, 0, cc.alpha, ws);
  cloner.step(first1);
  REQUIRE(cloner.task_params(1).values == expect.values);
}

TEST_CASE("task input: T=1 equals online, inactive heads untouched") {
  auto single = small_stream(1, 60);
  LearnerConfig c = cfg_of(Algorithm::kTaskInput);
  c.task_count = 1;
  TaskInputLearner ti(c, small_base());
  OnlineLearner online(cfg_of(Algorithm::kOnline, c.alpha), small_spec());
  for (const Example& ex : single.train(0)) {
    ti.step(ex);
    online.step(ex);
  }
  REQUIRE(ti.params().values == online.params().values);

  auto stream = small_stream();
  LearnerConfig c3 = cfg_of(Algorithm::kTaskInput);
  TaskInputLearner learner(c3, small_base());
  const auto& spec = *learner.params().spec;
  ParamVector before = learner.params();
  for (const Example& ex : stream.train(0)) learner.step(ex);
  for (int h = 1; h < 3; ++h) {
    const std::size_t off = spec.weight_offset(0, h);
    const std::size_t n = 10 * 8 + 8;
    for (std::size_t i = 0; i < n; ++i)
      REQUIRE(learner.params().values[off + i] == before.values[off + i]);
  }
}

TEST_CASE("ewc: degenerate collapses and penalty gradient") {
  auto stream = small_stream();

  // before any consolidation (single task) ewc equals online bit-exactly
  LearnerConfig c = cfg_of(Algorithm::kEwc);
  c.ewc_lambda = 7.5;
  EwcLearner ewc(c, small_spec());
  OnlineLearner online(cfg_of(Algorithm::kOnline, c.alpha), small_spec());
  for (const Example& ex : stream.train(0)) {
    ewc.step(ex);
    online.step(ex);
  }
  REQUIRE(ewc.params().values == online.params().values);
  CHECK(ewc.anchors().empty());

  // lambda = 0 equals online across task boundaries
  LearnerConfig c0 = cfg_of(Algorithm::kEwc);
  c0.ewc_lambda = 0.0;
  EwcLearner ewc0(c0, small_spec());
  OnlineLearner online0(cfg_of(Algorithm::kOnline, c0.alpha), small_spec());
  run_stream(ewc0, stream);
  run_stream(online0, stream);
  REQUIRE(ewc0.params().values == online0.params().values);

  // consolidation produces anchors; penalty is zero exactly at the anchor
  LearnerConfig cp = cfg_of(Algorithm::kEwc);
  cp.ewc_lambda = 3.0;
  EwcLearner pen(cp, small_spec());
  for (const Example& ex : stream.train(0)) pen.step(ex);
  pen.step(stream.train(1)[0]);  // triggers consolidation of task 0
  REQUIRE(pen.anchors().size() == 1);
  CHECK(pen.penalty_loss(pen.anchors()[0].theta_star) == 0.0);

  // penalty gradient matches finite differences of the penalty loss
  ParamVector probe = pen.params();
  Rng jitter(3);
  for (auto& v : probe.values) v += jitter.uniform(-0.05, 0.05);
  ParamVector pgrad = make_params(probe.spec);
  pen.penalty_grad(probe, pgrad);
  auto rep = merlab::testing::fd_check(
      probe, pgrad,
      [&](const ParamVector& q) { return pen.penalty_loss(q); });
  INFO("max rel " << rep.max_rel);
  CHECK(rep.ok);

  // combined loss gradient (cross entropy + penalty) also checks out
  const Example& ex = stream.train(1)[1];
  GradResult ce = loss_and_grad(probe, ex);
  ParamVector total = ce.grad;
  axpy(total.data(), 1.0, pgrad.data(), total.size());
  auto rep2 = merlab::testing::fd_check(probe, total, [&](const ParamVector& q) {
    Workspace w(q.spec);
    return loss_only(q, ex, 0, w) + pen.penalty_loss(q);
  });
  INFO("max rel " << rep2.max_rel);
  CHECK(rep2.ok);
}

TEST_CASE("gem projection: closed form, orthogonality, oracle") {
  Rng rng(31);

  SECTION("single violated constraint matches the analytic projection") {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t dim = 40;
      std::vector<double> g(dim), m(dim);
      for (auto& v : g) v = rng.gaussian();
      for (auto& v : m) v = rng.gaussian();
      double gm = 0.0, mm = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        gm += g[i] * m[i];
        mm += m[i] * m[i];
      }
      if (gm >= 0.0)
        for (auto& v : g) v = -v;  // force a violation
      gm = -std::abs(gm);

      std::vector<double> got = g;
      auto stats = gem_project(std::span<double>(got), {m.data()}, 0.0);
      REQUIRE(stats.projected);
      REQUIRE(stats.converged);
      for (std::size_t i = 0; i < dim; ++i) {
        const double want = g[i] - gm / mm * m[i];
        REQUIRE(got[i] == Catch::Approx(want).margin(1e-8));
      }
    }
  }

  SECTION("orthogonal constraints leave the gradient unchanged") {
    std::vector<double> g{1.0, 0.0, 2.0, 0.0};
    std::vector<double> m{0.0, 3.0, 0.0, -4.0};
    std::vector<double> got = g;
    auto stats = gem_project(std::span<double>(got), {m.data()}, 0.0);
    CHECK_FALSE(stats.projected);
    CHECK(got == g);
  }

  SECTION("five-constraint instances: feasible and equal to the oracle") {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t dim = 30;
      std::vector<double> g(dim);
      for (auto& v : g) v = rng.gaussian();
      std::vector<std::vector<double>> mem(5, std::vector<double>(dim));
      for (auto& m : mem)
        for (auto& v : m) v = rng.gaussian();

      std::vector<double> got = g;
      std::vector<const double*> ptrs;
      for (const auto& m : mem) ptrs.push_back(m.data());
      auto stats = gem_project(std::span<double>(got), ptrs, 0.0);
      if (!stats.projected) continue;
      REQUIRE(stats.converged);
      for (const auto& m : mem) {
        double d = 0.0;
        for (std::size_t i = 0; i < dim; ++i) d += got[i] * m[i];
        REQUIRE(d >= -1e-8);
      }
      auto want = merlab::testing::gem_projection_oracle(g, mem);
      for (std::size_t i = 0; i < dim; ++i)
        REQUIRE(got[i] == Catch::Approx(want[i]).margin(1e-6));
    }
  }
}

TEST_CASE("gem learner: single task equals online bit-exactly") {
  auto single = small_stream(1, 60);
  LearnerConfig c = cfg_of(Algorithm::kGem);
  c.task_count = 1;
  c.buffer_capacity = 30;
  GemLearner gem(c, small_spec());
  OnlineLearner online(cfg_of(Algorithm::kOnline, c.alpha), small_spec());
  for (const Example& ex : single.train(0)) {
    gem.step(ex);
    online.step(ex);
  }
  REQUIRE(gem.params().values == online.params().values);
  CHECK(gem.projection_count() == 0);
}

TEST_CASE("gem learner: projections keep past-task gradients feasible") {
  auto stream = small_stream(3, 50, 8);
  LearnerConfig c = cfg_of(Algorithm::kGem, 0.1);
  c.buffer_capacity = 30;
  GemLearner gem(c, small_spec());
  run_stream(gem, stream);
  CHECK(gem.fallback_count() == 0);
  CHECK(gem.projection_count() > 0);
}

TEST_CASE("er reservoir: cold start equals online and the mean rule holds") {
  auto stream = small_stream();
  LearnerConfig c = cfg_of(Algorithm::kErReservoir);
  c.k = 4;
  ErReservoirLearner er(c, small_spec());
  OnlineLearner online(cfg_of(Algorithm::kOnline, c.alpha), small_spec());
  const Example& first = stream.train(0)[0];
  er.step(first);
  online.step(first);
  CHECK(max_abs_diff(er.params(), online.params()) < 1e-12);

  // mean-loss gradient equals the mean of per-example gradients
  ErReservoirLearner er2(c, small_spec());
  for (int i = 0; i < 10; ++i) er2.buffer().update(stream.train(0)[i], *(new Rng(1)));
  ParamVector before = er2.params();
  std::vector<const Example*> batch{&stream.train(0)[11], &stream.train(0)[12],
                                    &stream.train(0)[13]};
  ParamVector mean = make_params(before.spec);
  for (const Example* e : batch)
    axpy(mean.data(), 1.0 / 3.0, loss_and_grad(before, *e).grad.data(),
         mean.size());
  er2.minibatch_step(batch);
  ParamVector want = sgd_step(before, mean, c.alpha);
  CHECK(max_abs_diff(er2.params(), want) < 1e-12);
}

TEST_CASE("er tasks: balanced groups") {
  auto stream = small_stream();
  LearnerConfig c = cfg_of(Algorithm::kErTasks);

  // single-group batch equals the plain er update
  ErTasksLearner tasks(c, small_spec());
  ErReservoirLearner plain(c, small_spec());
  std::vector<const Example*> batch{&stream.train(0)[0], &stream.train(0)[1],
                                    &stream.train(0)[2]};
  tasks.balanced_step(batch);
  plain.minibatch_step(batch);
  CHECK(max_abs_diff(tasks.params(), plain.params()) < 1e-12);

  // 1 + 3 members: the lone task carries the same group weight
  ErTasksLearner two(c, small_spec());
  ParamVector before = two.params();
  std::vector<const Example*> mixed{&stream.train(1)[0], &stream.train(0)[0],
                                    &stream.train(0)[1], &stream.train(0)[2]};
  ParamVector expect = make_params(before.spec);
  axpy(expect.data(), 1.0, loss_and_grad(before, *mixed[0]).grad.data(),
       expect.size());
  for (int i = 1; i < 4; ++i)
    axpy(expect.data(), 1.0 / 3.0, loss_and_grad(before, *mixed[i]).grad.data(),
         expect.size());
  two.balanced_step(mixed);
  ParamVector want = sgd_step(before, expect, c.alpha);
  CHECK(max_abs_diff(two.params(), want) < 1e-12);
}

TEST_CASE("mer a1: degenerate collapses") {
  auto stream = small_stream(1, 80);

  // s=k=1, beta=gamma=1 is exactly online SGD
  LearnerConfig c = cfg_of(Algorithm::kMerA1);
  c.s = 1;
  c.k = 1;
  c.beta = 1.0;
  c.gamma = 1.0;
  MerA1Learner mer(c, small_spec());
  OnlineLearner online(cfg_of(Algorithm::kOnline, c.alpha), small_spec());
  for (const Example& ex : stream.train(0)) {
    mer.step(ex);
    online.step(ex);
  }
  REQUIRE(mer.params().values == online.params().values);

  // gamma = 0 leaves parameters untouched regardless of inner work
  LearnerConfig cz = cfg_of(Algorithm::kMerA1);
  cz.s = 3;
  cz.k = 4;
  cz.beta = 0.7;
  cz.gamma = 0.0;
  MerA1Learner frozen(cz, small_spec());
  ParamVector init = frozen.params();
  for (const Example& ex : stream.train(0)) frozen.step(ex);
  REQUIRE(frozen.params().values == init.values);
}

TEST_CASE("mer a1 with beta=1 equals one-big-batch on a shared sample log") {
  auto stream = small_stream(2, 60);
  LearnerConfig ca = cfg_of(Algorithm::kMerA1);
  ca.s = 3;
  ca.k = 4;
  ca.beta = 1.0;
  ca.gamma = 0.6;
  LearnerConfig cb = ca;
  cb.algorithm = Algorithm::kMerObb;
  MerA1Learner a1(ca, small_spec());
  MerObbLearner obb(cb, small_spec());

  ReservoirBuffer<Example> shared(32);
  Rng rng(99);
  for (int t = 0; t < stream.task_count(); ++t) {
    for (const Example& ex : stream.train(t)) {
      auto batches = sample_mer_batches(shared, ex, ca.s, ca.k, rng);
      std::vector<const Example*> concat;
      for (const auto& b : batches) concat.insert(concat.end(), b.begin(), b.end());
      a1.apply_meta_update(batches);
      obb.apply_big_batch(concat);
      shared.update(ex, rng);
    }
  }
  REQUIRE(max_abs_diff(a1.params(), obb.params()) == 0.0);
}

TEST_CASE("mer obb: update algebra and loop oracle") {
  auto stream = small_stream(1, 30);
  const Example& ex = stream.train(0)[0];

  // s*k = 1: theta0 - gamma * alpha * g
  LearnerConfig c = cfg_of(Algorithm::kMerObb);
  c.s = 1;
  c.k = 1;
  c.gamma = 0.4;
  MerObbLearner mer(c, small_spec());
  ParamVector theta0 = mer.params();
  GradResult g = loss_and_grad(theta0, ex);
  mer.step(ex);
  for (std::size_t i = 0; i < theta0.size(); ++i) {
    const double want = theta0.values[i] - c.gamma * c.alpha * g.grad.values[i];
    REQUIRE(mer.params().values[i] == Catch::Approx(want).margin(1e-12));
  }

  // gamma = 1: plain sequential SGD over the batch, against a hand loop
  LearnerConfig c2 = cfg_of(Algorithm::kMerObb);
  c2.gamma = 1.0;
  MerObbLearner seq(c2, small_spec());
  std::vector<const Example*> batch{&stream.train(0)[1], &stream.train(0)[2],
                                    &stream.train(0)[3]};
  ParamVector manual = seq.params();
  for (const Example* e : batch)
    manual = sgd_step(manual, loss_and_grad(manual, *e).grad, c2.alpha);
  seq.apply_big_batch(batch);
  REQUIRE(seq.params().values == manual.values);

  // general gamma against an independent loop oracle
  LearnerConfig c3 = cfg_of(Algorithm::kMerObb);
  c3.gamma = 0.3;
  MerObbLearner gen(c3, small_spec());
  ParamVector start = gen.params();
  ParamVector inner = start;
  for (const Example* e : batch)
    inner = sgd_step(inner, loss_and_grad(inner, *e).grad, c3.alpha);
  gen.apply_big_batch(batch);
  for (std::size_t i = 0; i < start.size(); ++i) {
    const double want =
        start.values[i] + c3.gamma * (inner.values[i] - start.values[i]);
    REQUIRE(gen.params().values[i] == Catch::Approx(want).margin(1e-12));
  }
}

TEST_CASE("mer cel: single-step formula and trajectory oracle") {
  auto stream = small_stream(1, 30);
  const Example& ex = stream.train(0)[0];

  // k=1: theta0 - gamma * s * alpha * g(current)
  LearnerConfig c = cfg_of(Algorithm::kMerCel);
  c.s = 5;
  c.k = 1;
  c.gamma = 0.25;
  MerCelLearner cel(c, small_spec());
  ParamVector theta0 = cel.params();
  GradResult g = loss_and_grad(theta0, ex);
  cel.step(ex);
  for (std::size_t i = 0; i < theta0.size(); ++i) {
    const double want =
        theta0.values[i] - c.gamma * c.s * c.alpha * g.grad.values[i];
    REQUIRE(cel.params().values[i] == Catch::Approx(want).margin(1e-12));
  }

  // fixed sample log: hand-rolled loop oracle, current at its slot with s*alpha
  LearnerConfig c2 = cfg_of(Algorithm::kMerCel);
  c2.s = 3;
  c2.k = 4;
  c2.gamma = 0.8;
  MerCelLearner traj(c2, small_spec());
  std::vector<const Example*> batch{&stream.train(0)[1], &stream.train(0)[2],
                                    &stream.train(0)[3], &stream.train(0)[4]};
  const int cur_index = 2;
  ParamVector start = traj.params();
  ParamVector inner = start;
  for (int j = 0; j < 4; ++j) {
    const double rate = j == cur_index ? c2.s * c2.alpha : c2.alpha;
    inner = sgd_step(inner, loss_and_grad(inner, *batch[j]).grad, rate);
  }
  traj.apply_cel_batch(batch, cur_index);
  for (std::size_t i = 0; i < start.size(); ++i) {
    const double want =
        start.values[i] + c2.gamma * (inner.values[i] - start.values[i]);
    REQUIRE(traj.params().values[i] == Catch::Approx(want).margin(1e-12));
  }

  // s = 1: the current example is treated like any other member
  LearnerConfig c3 = cfg_of(Algorithm::kMerCel);
  c3.s = 1;
  c3.k = 4;
  c3.gamma = 1.0;
  MerCelLearner flat(c3, small_spec());
  LearnerConfig c4 = c3;
  c4.algorithm = Algorithm::kMerObb;
  MerObbLearner plain(c4, small_spec());
  flat.apply_cel_batch(batch, 1);
  plain.apply_big_batch(batch);
  REQUIRE(flat.params().values == plain.params().values);
}

TEST_CASE("reptile offline") {
  StreamSpec spec;
  spec.kind = StreamKind::kSynthetic;
  spec.task_count = 1;
  spec.train_per_task = 400;
  spec.synth_sep_sigmas = 10.0;
  spec.seed = 77;
  TaskStream s = make_synthetic(spec);

  SECTION("beta = 1 equals plain sequential mini-batch SGD") {
    LearnerConfig c;
    c.alpha = 0.05;
    c.beta = 1.0;
    c.s = 4;
    c.k = 8;
    c.seed = 5;
    ParamVector got = reptile_offline(s.train(0), c, 40);

    // replicate the exact draw sequence with beta folded out
    SpecPtr net = std::make_shared<NetworkSpec>(10, std::vector<int>{100}, 2);
    ParamVector want = init_params(net, derive_seed(c.seed, seed_tag::kInit));
    Rng rng(derive_seed(c.seed, seed_tag::kBuffer));
    Workspace ws(net);
    ParamVector acc = make_params(net);
    std::vector<std::size_t> idx;
    for (int step = 0; step < 40; ++step) {
      std::fill(acc.values.begin(), acc.values.end(), 0.0);
      detail::sample_distinct(s.train(0).size(), c.k, rng, idx);
      for (std::size_t j : idx) {
        loss_and_grad_ws(want, s.train(0)[j], 0, ws);
        ws.accumulate(acc, 1.0);
      }
      for (double& v : acc.values) v *= 1.0 / c.k;
      axpy(want.data(), -c.alpha, acc.data(), want.size());
    }
    REQUIRE(got.values == want.values);
  }

  SECTION("convergence on the stationary blob task") {
    LearnerConfig c;
    c.alpha = 0.1;
    c.beta = 0.5;
    c.s = 5;
    c.k = 10;
    c.seed = 9;
    ParamVector p = reptile_offline(s.train(0), c, 2000);
    Workspace ws(p.spec);
    int wrong = 0;
    for (const Example& ex : s.train(0)) {
      auto logits = ws.forward<float>(p, ex.x, 0);
      wrong += (logits[1] > logits[0] ? 1 : 0) != ex.label;
    }
    const double err = static_cast<double>(wrong) / s.train(0).size();
    INFO("train error " << err);
    CHECK(err < 0.02);
  }
}
