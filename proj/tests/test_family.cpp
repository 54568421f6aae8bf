#include <algorithm>

#include "doctest.h"
#include "spp/data.hpp"
#include "spp/errors.hpp"
#include "spp/family.hpp"

using namespace spp;

namespace {

ModelDims small_dims() {
  ModelDims d;
  d.layers = 1;
  d.heads = 2;
  d.model_dim = 4;
  d.qk_dim = 2;
  d.v_dim = 2;
  d.ffn_dim = 6;
  d.classes = 3;
  return d;
}

struct Fixture {
  TransformerWeights dense = init_transformer(small_dims(), 41);
  Dataset data = gen_synthetic_classification(42, 48, 3, 4, 3);
  HyperParams hp;
  SolutionPath path;

  explicit Fixture(std::size_t steps = 100, std::size_t stride = 10, double lambda = 0.2) {
    hp.alpha = 0.05;
    hp.lambda = lambda;
    hp.nu = 2.0;
    hp.search_steps = steps;
    TransformerObjective obj(dense, data);
    path = SolutionPath(obj.layout(), stride);
    auto s = SearchState::initial(obj.size());
    record_snapshot(path, s);
    for (std::size_t k = 0; k < steps; ++k) {
      s = search_step(s, hp, obj);
      if (path.due(s.step)) record_snapshot(path, s);
    }
  }
};

}  // namespace

TEST_CASE("reverse indices of the prune schedule") {
  CHECK(reverse_indices(100, 5) == std::vector<std::size_t>{80, 60, 40, 20, 0});
  CHECK(reverse_indices(10, 3) == std::vector<std::size_t>{6, 3, 0});
  CHECK(reverse_indices(7, 7) == std::vector<std::size_t>{6, 5, 4, 3, 2, 1, 0});
  CHECK_THROWS_AS(reverse_indices(10, 0), ValidationError);
  CHECK_THROWS_AS(reverse_indices(3, 4), ValidationError);
}

TEST_CASE("reverse indices follow the floor formula and decrease strictly") {
  for (std::size_t ts = 1; ts <= 60; ++ts) {
    for (std::size_t tp = 1; tp <= ts; ++tp) {
      auto r = reverse_indices(ts, tp);
      REQUIRE(r.size() == tp);
      for (std::size_t k = 0; k < tp; ++k) {
        const double exact = static_cast<double>(ts) - static_cast<double>((k + 1) * ts) / static_cast<double>(tp);
        CHECK(r[k] == static_cast<std::size_t>(exact + 1e-9));
        if (k > 0) CHECK(r[k] < r[k - 1]);
      }
      CHECK(r.back() == 0);
    }
  }
}

TEST_CASE("snapshots are recorded every stride, including step 0") {
  Fixture f;
  const auto& snaps = f.path.snapshots();
  REQUIRE(snaps.size() == 11);
  for (std::size_t i = 0; i < snaps.size(); ++i) CHECK(snaps[i].step == 10 * i);
  CHECK(snaps[0].support == 0);
  CHECK(f.path.at_or_below(37).step == 30);
  CHECK(f.path.group_names().front() == "L0.qk");
  CHECK(f.path.snapshots()[0].groups.size() == f.path.group_names().size());
}

TEST_CASE("recording out of order or a repeated step is rejected") {
  Fixture f(20, 10);
  auto s = SearchState::initial(f.path.layout().total());
  s.step = 20;
  CHECK_THROWS_AS(f.path.record(s), OrderingError);
  s.step = 5;
  CHECK_THROWS_AS(f.path.record(s), OrderingError);
  SolutionPath fresh(f.path.layout(), 10);
  CHECK_THROWS_AS(fresh.at_or_below(0), LookupError);
  CHECK_THROWS_AS(SolutionPath(f.path.layout(), 0), ConfigError);
}

TEST_CASE("a recorded snapshot is a copy, unaffected by later state changes") {
  Fixture f(0, 1);
  auto s = SearchState::initial(f.path.layout().total());
  s.step = 1;
  s.gamma[0] = 0.5;
  f.path.record(s);
  s.gamma[0] = 0.9;
  CHECK(f.path.snapshots().back().gamma[0] == 0.5);
}

TEST_CASE("sparsity of a flat mask") {
  CHECK(sparsity(std::vector<double>{0, 0.5, 1, 0}) == 0.5);
  CHECK(sparsity(std::vector<double>{1, 1, 1}) == 0.0);
  Fixture f(0, 1);
  CHECK(sparsity(MaskSet::ones(f.path.layout())) == 0.0);
  CHECK(sparsity(MaskSet::filled(f.path.layout(), 0.0)) == 1.0);
}

TEST_CASE("family extraction: indices, strictly shrinking cost, nested support") {
  Fixture f(200, 10, 0.05);
  auto fam = extract_family(f.path, f.dense, 200, 5, 3);
  CHECK(fam.requested == std::vector<std::size_t>{160, 120, 80, 40, 0});
  REQUIRE(fam.members.size() >= 2);
  const auto dense_cost = count_cost(f.dense, 3);
  for (std::size_t i = 0; i < fam.members.size(); ++i) {
    const auto& m = fam.members[i];
    CHECK(m.source_step <= m.requested_step);
    CHECK(m.source_step % 10 == 0);
    CHECK(m.cost.params <= dense_cost.params);
    const double s = sparsity(m);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    if (i > 0) {
      CHECK(m.cost.params <= fam.members[i - 1].cost.params);
      CHECK(s >= sparsity(fam.members[i - 1]));
    }
  }
  // On this toy, support only grows along the path, so members nest.
  for (std::size_t i = 1; i < fam.members.size(); ++i) {
    auto big = fam.members[i - 1].support(), small = fam.members[i].support();
    for (std::size_t j = 0; j < big.size(); ++j)
      if (small[j]) CHECK(big[j]);
  }
}

TEST_CASE("empty snapshots are skipped with a warning") {
  Fixture f(100, 10);
  auto fam = extract_family(f.path, f.dense, 100, 5, 3);
  // Index 0 always maps to the Gamma = 0 start.
  CHECK(fam.members.size() < 5);
  CHECK(std::any_of(fam.warnings.begin(), fam.warnings.end(),
                    [](const std::string& w) { return w.find("empty support") != std::string::npos; }));
  for (const auto& m : fam.members) CHECK(m.source_step != 0);
}

TEST_CASE("extraction needs a matching layout") {
  Fixture f(20, 10);
  auto d = small_dims();
  d.ffn_dim = 5;
  auto other = init_transformer(d, 1);
  CHECK_THROWS_AS(extract_family(f.path, other, 20, 2, 3), ShapeError);
}

TEST_CASE("finetune: zero epochs is a no-op and training lowers the loss") {
  Fixture f(200, 10, 0.05);
  auto fam = extract_family(f.path, f.dense, 200, 3, 3);
  REQUIRE(!fam.members.empty());
  auto m = fam.members.front();
  const auto before = m;
  TrainOptions opt;
  opt.epochs = 0;
  finetune(m, f.data, opt);
  CHECK(m.model.weights == before.model.weights);

  opt.epochs = 5;
  opt.lr = 0.05;
  opt.batch_size = 16;
  opt.seed = 3;
  auto r = finetune(m, f.data, opt);
  CHECK(m.finetuned);
  CHECK(r.final_loss < r.initial_loss);
  CHECK(m.cost == before.cost);
}
