#include <gtest/gtest.h>

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "unisurf/datasets.hpp"
#include "unisurf/errors.hpp"

using namespace unisurf;
using namespace unisurf::data;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "unisurf_data_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_png(const fs::path& path, int value = 128) {
  fs::create_directories(path.parent_path());
  cv::imwrite(path.string(), cv::Mat(8, 8, CV_8UC3, cv::Scalar::all(value)));
}

void write_mask(const fs::path& path, bool defect) {
  fs::create_directories(path.parent_path());
  cv::Mat m(8, 8, CV_8U, cv::Scalar(0));
  if (defect) m(cv::Rect(2, 2, 3, 3)).setTo(255);
  cv::imwrite(path.string(), m);
}

std::size_t count_kind(const Samples& s, LabelKind k) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [k](const auto& x) { return x.kind == k; }));
}

Samples synthetic(int normals, int defects) {
  Samples s;
  for (int i = 0; i < normals; ++i) s.push_back({"/d/n" + std::to_string(i) + ".png", LabelKind::Normal, {}, Split::Train, {}});
  for (int i = 0; i < defects; ++i) {
    s.push_back({"/d/a" + std::to_string(i) + ".png", LabelKind::AnomalousFull, fs::path("/d/a" + std::to_string(i) + "_m.png"),
                 Split::Train, {}});
  }
  s.push_back({"/d/t0.png", LabelKind::Normal, {}, Split::Test, {}});
  s.push_back({"/d/t1.png", LabelKind::AnomalousFull, fs::path("/d/t1_m.png"), Split::Test, {}});
  return s;
}

}  // namespace

TEST(Manifest, RoundTrip) {
  const auto dir = fresh_dir("manifest");
  Samples s{{dir / "img/a.png", LabelKind::Normal, {}, Split::Train, {}},
            {dir / "img/b.png", LabelKind::AnomalousFull, dir / "masks/b.png", Split::Test, 2},
            {"/elsewhere/c.png", LabelKind::AnomalousWeak, {}, Split::Train, 0}};
  write_manifest(dir / "m.tsv", s);
  EXPECT_EQ(read_manifest(dir / "m.tsv"), s);
  std::ifstream in(dir / "m.tsv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header.front(), '#');
  EXPECT_EQ(first, "img/a.png\tnormal\t-\ttrain\t-");
}

TEST(Manifest, RejectsMalformedRows) {
  const auto dir = fresh_dir("bad_manifest");
  std::ofstream(dir / "a.tsv") << "x.png\tanomalous_full\t-\ttrain\t-\n";
  EXPECT_THROW(read_manifest(dir / "a.tsv"), DataError);
  std::ofstream(dir / "b.tsv") << "x.png\tnormal\ttrain\n";
  EXPECT_THROW(read_manifest(dir / "b.tsv"), DataError);
  std::ofstream(dir / "c.tsv") << "x.png\tbroken\t-\ttrain\t-\n";
  EXPECT_THROW(read_manifest(dir / "c.tsv"), DataError);
  EXPECT_THROW(read_manifest(dir / "missing.tsv"), DataError);
}

TEST(Layouts, MVTec) {
  const auto root = fresh_dir("mvtec");
  for (int i = 0; i < 4; ++i) write_png(root / "train/good" / (std::to_string(i) + ".png"));
  for (int i = 0; i < 2; ++i) write_png(root / "test/good" / (std::to_string(i) + ".png"));
  for (int i = 0; i < 3; ++i) {
    write_png(root / "test/crack" / (std::to_string(i) + ".png"));
    write_mask(root / "ground_truth/crack" / (std::to_string(i) + "_mask.png"), true);
  }
  const auto s = load_dataset(root, DatasetLayout::MVTec);
  EXPECT_EQ(s.size(), 9u);
  EXPECT_EQ(count_kind(s, LabelKind::AnomalousFull), 3u);
  for (const auto& x : s) {
    if (x.kind == LabelKind::AnomalousFull) {
      EXPECT_EQ(x.split, Split::Test);
      ASSERT_TRUE(x.mask_path);
      EXPECT_TRUE(fs::exists(*x.mask_path));
    }
  }
  fs::remove(root / "ground_truth/crack/1_mask.png");
  try {
    load_dataset(root, DatasetLayout::MVTec);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("1.png"), std::string::npos);
  }
}

TEST(Layouts, KolektorStyleCountsDefects) {
  const auto root = fresh_dir("ksdd2");
  for (int i = 0; i < 300; ++i) {
    const auto id = std::to_string(10000 + i);
    write_png(root / "train" / (id + ".png"));
    write_mask(root / "train" / (id + "_GT.png"), i < 246);
  }
  for (int i = 0; i < 10; ++i) {
    const auto id = std::to_string(20000 + i);
    write_png(root / "test" / (id + ".png"));
    write_mask(root / "test" / (id + "_GT.png"), i % 2 == 0);
  }
  const auto s = load_dataset(root, DatasetLayout::KSDD2);
  EXPECT_EQ(s.size(), 310u);
  std::size_t train_defects = 0;
  for (const auto& x : s) train_defects += x.split == Split::Train && x.kind == LabelKind::AnomalousFull;
  EXPECT_EQ(train_defects, 246u);
  EXPECT_EQ(count_kind(s, LabelKind::AnomalousFull), 251u);
}

TEST(Layouts, VisaCsv) {
  const auto root = fresh_dir("visa");
  write_png(root / "candle/Data/Images/Normal/0.png");
  write_png(root / "candle/Data/Images/Normal/1.png");
  write_png(root / "candle/Data/Images/Anomaly/2.png");
  write_mask(root / "candle/Data/Masks/Anomaly/2.png", true);
  write_png(root / "pcb1/Data/Images/Normal/0.png");
  fs::create_directories(root / "split_csv");
  std::ofstream(root / "split_csv/1cls.csv")
      << "object,split,label,image,mask\n"
         "candle,train,normal,candle/Data/Images/Normal/0.png,\n"
         "candle,test,normal,candle/Data/Images/Normal/1.png,\n"
         "candle,test,anomaly,candle/Data/Images/Anomaly/2.png,candle/Data/Masks/Anomaly/2.png\n"
         "pcb1,train,normal,pcb1/Data/Images/Normal/0.png,\n";
  const auto s = load_dataset(root, DatasetLayout::VisA, "candle");
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[2].kind, LabelKind::AnomalousFull);
  EXPECT_EQ(s[2].split, Split::Test);
  EXPECT_EQ(load_dataset(root, DatasetLayout::VisA).size(), 4u);
}

TEST(Layouts, SensumAndFolds) {
  const auto root = fresh_dir("sensum");
  for (int i = 0; i < 12; ++i) write_png(root / "negative/data" / (std::to_string(i) + ".png"));
  for (int i = 0; i < 6; ++i) {
    write_png(root / "positive/data" / (std::to_string(i) + ".png"));
    write_mask(root / "positive/annotation" / (std::to_string(i) + ".png"), true);
  }
  const auto s = load_dataset(root, DatasetLayout::Sensum);
  EXPECT_EQ(s.size(), 18u);
  EXPECT_EQ(count_kind(s, LabelKind::AnomalousFull), 6u);

  const auto folds = make_folds(s, 3, 1);
  ASSERT_EQ(folds.size(), 3u);
  std::set<fs::path> tested;
  for (const auto& f : folds) {
    EXPECT_EQ(f.train.size() + f.test.size(), 18u);
    EXPECT_EQ(count_kind(f.test, LabelKind::AnomalousFull), 2u);
    EXPECT_EQ(count_kind(f.test, LabelKind::Normal), 4u);
    for (const auto& x : f.test) EXPECT_TRUE(tested.insert(x.image_path).second);
  }
  EXPECT_EQ(tested.size(), 18u);

  RunConfig cfg;
  cfg.data.root = root.string();
  cfg.data.layout = DatasetLayout::Sensum;
  cfg.regime = Regime::Full;
  cfg.data.fold = 1;
  const auto view = prepare(cfg);
  EXPECT_EQ(view.train.size(), 12u);
  EXPECT_EQ(view.test.size(), 6u);
}

TEST(Layouts, EmptyRootIsADataError) {
  const auto root = fresh_dir("empty");
  EXPECT_THROW(load_dataset(root, DatasetLayout::MVTec), DataError);
  EXPECT_THROW(load_dataset(root, DatasetLayout::KSDD2), DataError);
  EXPECT_THROW(load_dataset(root, DatasetLayout::Sensum), DataError);
}

TEST(Folds, RejectsTooManyFolds) { EXPECT_THROW(make_folds(synthetic(1, 0), 5, 0), DataError); }

TEST(Regimes, Unsupervised) {
  const auto v = apply_regime(synthetic(10, 4), Regime::Unsupervised, std::nullopt);
  EXPECT_EQ(v.train.size(), 10u);
  EXPECT_EQ(count_kind(v.train, LabelKind::Normal), 10u);
  EXPECT_EQ(v.test.size(), 2u);
}

TEST(Regimes, WeakDropsMasks) {
  const auto v = apply_regime(synthetic(10, 4), Regime::Weak, std::nullopt);
  EXPECT_EQ(count_kind(v.train, LabelKind::AnomalousWeak), 4u);
  for (const auto& s : v.train) EXPECT_FALSE(s.mask_path);
  EXPECT_EQ(count_kind(v.test, LabelKind::AnomalousFull), 1u);
}

TEST(Regimes, MixedEndpointsMatchWeakAndFull) {
  const auto s = synthetic(10, 8);
  EXPECT_EQ(apply_regime(s, Regime::Mixed, MixedPlan{1.0, {}, 3}).train, apply_regime(s, Regime::Full, {}).train);
  EXPECT_EQ(apply_regime(s, Regime::Mixed, MixedPlan{0.0, {}, 3}).train, apply_regime(s, Regime::Weak, {}).train);
}

TEST(Regimes, MixedCountAndRatio) {
  const auto s = synthetic(20, 246);
  const auto v = apply_regime(s, Regime::Mixed, MixedPlan{{}, 53, 0});
  EXPECT_EQ(count_kind(v.train, LabelKind::AnomalousFull), 53u);
  EXPECT_EQ(count_kind(v.train, LabelKind::AnomalousWeak), 193u);
  const auto r = apply_regime(s, Regime::Mixed, MixedPlan{0.5, {}, 0});
  EXPECT_EQ(count_kind(r.train, LabelKind::AnomalousFull), 123u);
  EXPECT_EQ(apply_regime(s, Regime::Mixed, MixedPlan{{}, 53, 0}).train, v.train);
  EXPECT_NE(apply_regime(s, Regime::Mixed, MixedPlan{{}, 53, 1}).train, v.train);
  EXPECT_THROW(apply_regime(s, Regime::Mixed, MixedPlan{{}, 300, 0}), ConfigError);
  EXPECT_THROW(apply_regime(s, Regime::Mixed, std::nullopt), ConfigError);
}

TEST(Regimes, LeakageIsRejected) {
  auto s = synthetic(3, 1);
  s.push_back({"/d/../d/n0.png", LabelKind::Normal, {}, Split::Test, {}});
  EXPECT_THROW(apply_regime(s, Regime::Full, std::nullopt), DataError);
}

TEST(Loading, MaskIsBinaryAndImageInUnitRange) {
  const auto dir = fresh_dir("load");
  write_png(dir / "a.png", 255);
  write_mask(dir / "m.png", true);
  const auto img = load_rgb(dir / "a.png", 16, 16);
  EXPECT_EQ(img.type(), CV_32FC3);
  EXPECT_EQ(img.rows, 16);
  double lo, hi;
  cv::minMaxLoc(img.reshape(1), &lo, &hi);
  EXPECT_NEAR(hi, 1.0, 1e-6);
  const auto m = load_mask(dir / "m.png", 16, 16);
  cv::minMaxLoc(m, &lo, &hi);
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  EXPECT_EQ(cv::countNonZero(m), 36);
  EXPECT_THROW(load_rgb(dir / "nope.png", 8, 8), DataError);
}
