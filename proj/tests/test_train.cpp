#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cornerformer/gradcheck.hpp"
#include "cornerformer/train.hpp"

using namespace cornerformer;
namespace fs = std::filesystem;

namespace {

Config tiny() {
  auto c = gradcheck_config();
  c.image_size = 64;
  c.candidates = 32;
  c.batch = 2;
  c.steps = 6;
  c.lr = 1e-3;
  c.checkpoint_every = 3;
  c.seed = 21;
  return c;
}

std::vector<float> flat(const CornerFormer<float>& m) {
  std::vector<float> out;
  for (const auto& e : m.params().entries()) out.insert(out.end(), e.value.data().begin(), e.value.data().end());
  return out;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  for (std::string s; std::getline(f, s);) out.push_back(s);
  return out;
}

}  // namespace

TEST(StepRng, DependsOnSeedAndStep) {
  auto a = step_rng(1, 5), b = step_rng(1, 5), c = step_rng(1, 6), d = step_rng(2, 5);
  const auto x = a();
  EXPECT_EQ(x, b());
  EXPECT_NE(x, c());
  EXPECT_NE(x, d());
}

TEST(Csv, HeaderAndRow) {
  EXPECT_EQ(csv_header(), "step,l_direct,l_seg,l_boost,l_edge,total");
  StepLosses l{3, 0.5, 0.25, 1, 2, 3.5};
  EXPECT_EQ(csv_row(l), "3,0.5,0.25,1,2,3.5");
}

TEST(Training, SameSeedSameWeights) {
  const auto samples = generate_dataset(2, 4, 64, 1);
  CornerFormer<float> a(tiny(), 1), b(tiny(), 1);
  const auto ha = train(a, samples), hb = train(b, samples);
  ASSERT_EQ(ha.size(), 6u);
  for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i].total, hb[i].total);
  EXPECT_EQ(flat(a), flat(b));
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  const auto samples = generate_dataset(2, 4, 64, 1);
  const auto dir = fs::temp_directory_path() / "cf_train_resume";
  fs::remove_all(dir);
  fs::create_directories(dir);

  CornerFormer<float> full(tiny(), 1);
  TrainOptions fo;
  fo.log_path = (dir / "full.csv").string();
  train(full, samples, fo);

  auto half_cfg = tiny();
  half_cfg.steps = 3;
  CornerFormer<float> first(half_cfg, 1);
  TrainOptions ho;
  ho.log_path = (dir / "half.csv").string();
  ho.checkpoint_path = (dir / "half.bin").string();
  train(first, samples, ho);
  auto resumed = CornerFormer<float>::load(ho.checkpoint_path);
  EXPECT_EQ(resumed.params().adam_steps, 3);
  auto cfg = resumed.config();
  cfg.steps = 6;
  CornerFormer<float> second(cfg, 0);
  second.load_records(resumed.to_records());
  train(second, samples, ho);

  EXPECT_EQ(flat(second), flat(full));
  const auto a = lines(dir / "full.csv"), b = lines(dir / "half.csv");
  EXPECT_EQ(a.size(), 7u);
  EXPECT_EQ(a, b);
  fs::remove_all(dir);
}

TEST(Training, CheckpointsAtIntervalAndEnd) {
  const auto samples = generate_dataset(2, 2, 64, 0);
  const auto path = fs::temp_directory_path() / "cf_train_ckpt.bin";
  fs::remove(path);
  int saves_seen = 0;
  TrainOptions o;
  o.checkpoint_path = path.string();
  o.on_step = [&](const StepLosses& l) {
    if (l.step == 4) {
      EXPECT_TRUE(fs::exists(path));
      EXPECT_EQ(CornerFormer<float>::load(path.string()).params().adam_steps, 3);
      ++saves_seen;
    }
  };
  CornerFormer<float> m(tiny(), 1);
  train(m, samples, o);
  EXPECT_EQ(saves_seen, 1);
  EXPECT_EQ(CornerFormer<float>::load(path.string()).params().adam_steps, 6);
  fs::remove(path);
}

TEST(Training, EmptyTrainingSetIsDataError) {
  CornerFormer<float> m(tiny(), 1);
  EXPECT_THROW(train(m, {}), DataError);
}

TEST(Training, LossesAreFinite) {
  CornerFormer<float> m(tiny(), 1);
  for (const auto& l : train(m, generate_dataset(4, 3, 64, 2))) {
    EXPECT_TRUE(std::isfinite(l.total));
    EXPECT_GT(l.total, 0);
  }
}
