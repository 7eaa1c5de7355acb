#include <gtest/gtest.h>

#include <set>

#include "ridgematch/data.hpp"
#include "ridgematch/image.hpp"
#include "support/temp_dir.hpp"

using namespace ridgematch;
using testutil::TempDir;
using testutil::write_file;

namespace {

const std::string kHeader = "path,subject_id,finger_id,modality,split\n";

std::vector<Sample> paired_samples(int ids, int per_modality) {
  std::vector<Sample> out;
  for (int i = 0; i < ids; ++i)
    for (Modality m : {Modality::CL, Modality::CB})
      for (int k = 0; k < per_modality; ++k) {
        Sample s;
        s.subject_id = "s" + std::to_string(i);
        s.finger_id = "f0";
        s.modality = m;
        s.raw_path = s.identity() + to_string(m) + std::to_string(k);
        out.push_back(s);
      }
  return out;
}

std::vector<int> dense_labels(const std::vector<Sample>& s) {
  std::map<std::string, int> ids;
  std::vector<int> out;
  for (const auto& x : s) out.push_back(ids.emplace(x.identity(), static_cast<int>(ids.size())).first->second);
  return out;
}

}  // namespace

TEST(Manifest, FixtureRoundTrip) {
  const auto s = load_manifest(std::filesystem::path(RIDGEMATCH_FIXTURE_DIR) / "four_rows.csv", false);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0].raw_path, "img/a_cl.png");
  EXPECT_EQ(s[0].image_path, std::filesystem::path(RIDGEMATCH_FIXTURE_DIR) / "img/a_cl.png");
  EXPECT_EQ(s[1].modality, Modality::CB);
  EXPECT_EQ(s[2].identity(), "s002:f3");
  EXPECT_EQ(s[2].split, Split::Test);
  EXPECT_EQ(s[3].image_path, std::filesystem::path("/data/b_cb.png"));
  EXPECT_EQ(s[3].rotation, 0);
}

TEST(Manifest, EmptyDataSection) {
  TempDir dir;
  write_file(dir / "m.csv", kHeader);
  EXPECT_TRUE(load_manifest(dir / "m.csv").empty());
}

TEST(Manifest, ErrorsNameTheLine) {
  TempDir dir;
  auto expect_error = [&](const std::string& body, const std::string& needle) {
    write_file(dir / "m.csv", body);
    try {
      load_manifest(dir / "m.csv", false);
      ADD_FAILURE() << "no error for: " << body;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_error(kHeader + "a.png,s1,f0,CL,train\nb.png,s1,f0,XX,train\n", "m.csv:3: bad modality 'XX'");
  expect_error(kHeader + "a.png,s1,f0,CL,dev\n", ":2: bad split");
  expect_error(kHeader + "a.png,s1,CL,train\n", ":2: expected 5 columns");
  expect_error("path,subject_id,modality,split\n", ":1: header");
  expect_error("path,subject_id,finger_id,modality,split,rotation\na.png,s1,f0,CL,train,45\n", "multiple of 90");
  write_file(dir / "m.csv", kHeader + "missing.png,s1,f0,CL,train\n");
  EXPECT_THROW(load_manifest(dir / "m.csv"), ParseError);
  EXPECT_THROW(load_manifest(dir / "nope.csv"), ParseError);
}

TEST(Manifest, WriteThenLoad) {
  TempDir dir;
  auto samples = paired_samples(2, 1);
  for (auto& s : samples) {
    s.raw_path += ".png";
    write_png(dir / s.raw_path, Image(4, 4, 0.5f));
  }
  write_manifest(dir / "m.csv", samples);
  const auto back = load_manifest(dir / "m.csv");
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].raw_path, samples[i].raw_path);
    EXPECT_EQ(back[i].identity(), samples[i].identity());
    EXPECT_EQ(back[i].modality, samples[i].modality);
  }
}

TEST(Synth, IdentityDeterministicDistinctAndInRange) {
  EXPECT_EQ(synth_identity(42), synth_identity(42));
  std::set<std::pair<double, double>> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto p = synth_identity(s);
    EXPECT_GE(p.frequency, 0.05);
    EXPECT_LE(p.frequency, 0.25);
    seen.insert({p.frequency, p.phase});
    if (s > 0) {
      EXPECT_FALSE(p == synth_identity(s - 1));
    }
  }
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(Synth, RenderDeterministicAndBounded) {
  const auto id = synth_identity(7);
  for (Modality m : {Modality::CL, Modality::CB}) {
    const Image a = render_fingerprint(id, m, 3), b = render_fingerprint(id, m, 3);
    EXPECT_EQ(a, b);
    for (float v : a.pixels) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_FALSE(render_fingerprint(synth_identity(1), Modality::CB, 0) ==
               render_fingerprint(synth_identity(2), Modality::CB, 0));
}

TEST(Synth, ContactlessHasLowerContrast) {
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto id = synth_identity(i);
    EXPECT_LT(michelson_contrast(render_fingerprint(id, Modality::CL, i)),
              michelson_contrast(render_fingerprint(id, Modality::CB, i)));
  }
}

TEST(Preprocess, IdentityConstantAndRotation) {
  Image img(4, 4);
  for (std::size_t i = 0; i < 16; ++i) img.pixels[i] = static_cast<float>(i) / 15.0f;
  const auto p = preprocess(img, 4);
  EXPECT_FALSE(p.constant);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(p.image.pixels[i], img.pixels[i], 1e-6);

  const auto c = preprocess(Image(5, 5, 0.3f), 4);
  EXPECT_TRUE(c.constant);
  EXPECT_EQ(c.image, Image(4, 4, 0.0f));

  Image r(3, 5);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) r.pixels[i] = static_cast<float>(i);
  EXPECT_EQ(rotate_quarters(rotate_quarters(r, 1), 1), rotate_quarters(r, 2));
  EXPECT_EQ(rotate_quarters(r, 4), r);
  EXPECT_EQ(rotate_quarters(r, 1).at(0, 0), r.at(2, 0));
  EXPECT_THROW(preprocess(img, 4, 45), DataError);
}

TEST(Preprocess, ResizeStretchesToTarget) {
  Image img(2, 2);
  img.pixels = {0.0f, 1.0f, 0.0f, 1.0f};
  const auto p = preprocess(img, 4);
  EXPECT_EQ(p.image.height, 4u);
  EXPECT_EQ(p.image.at(0, 0), 0.0f);
  EXPECT_EQ(p.image.at(3, 3), 1.0f);
  EXPECT_NEAR(p.image.at(1, 1), 0.25f, 1e-6);
}

TEST(Batches, ShapeAndBothModalities) {
  const auto s = paired_samples(2, 1);
  const auto b = make_batches(s, dense_labels(s), 2, 1, 0);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].size(), 4u);
  std::map<int, std::set<Modality>> seen;
  for (std::size_t i = 0; i < b[0].size(); ++i) seen[b[0].labels[i]].insert(b[0].modalities[i]);
  EXPECT_EQ(seen.size(), 2u);
  for (const auto& [_, m] : seen) EXPECT_EQ(m.size(), 2u);
}

TEST(Batches, DeterministicAndCovering) {
  const auto s = paired_samples(7, 4);
  const auto labels = dense_labels(s);
  const auto a = make_batches(s, labels, 3, 2, 11);
  const auto b = make_batches(s, labels, 3, 2, 11);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].indices, b[i].indices);
  EXPECT_EQ(a.size(), 2u * 3u);  // 2 rounds of ceil(7/3) groups
  std::map<int, int> count;
  for (const auto& batch : a) {
    EXPECT_EQ(batch.size(), 12u);
    for (int l : batch.labels) ++count[l];
    for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_EQ(labels[batch.indices[i]], batch.labels[i]);
  }
  EXPECT_EQ(count.size(), 7u);
  bool differs = false;
  const auto c = make_batches(s, labels, 3, 2, 12);
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].indices != c[i].indices;
  EXPECT_TRUE(differs);
}

TEST(Batches, WithinRoundSamplesAreDisjoint) {
  const auto s = paired_samples(4, 4);
  const auto b = make_batches(s, dense_labels(s), 2, 2, 5);
  ASSERT_EQ(b.size(), 4u);
  std::set<std::size_t> round0, round1;
  for (std::size_t i = 0; i < 2; ++i) round0.insert(b[i].indices.begin(), b[i].indices.end());
  for (std::size_t i = 2; i < 4; ++i) round1.insert(b[i].indices.begin(), b[i].indices.end());
  EXPECT_EQ(round0.size(), 16u);
  EXPECT_EQ(round1.size(), 16u);
}

TEST(Batches, DeficientIdentitiesAreListed) {
  auto s = paired_samples(3, 2);
  s.erase(s.begin() + 2);  // s0 keeps one CB sample
  try {
    make_batches(s, dense_labels(s), 2, 2, 0);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("s0:f0"), std::string::npos) << e.what();
  }
  EXPECT_THROW(make_batches(paired_samples(2, 2), dense_labels(paired_samples(2, 2)), 3, 1, 0), ConfigError);
  EXPECT_THROW(make_batches(paired_samples(2, 2), dense_labels(paired_samples(2, 2)), 1, 1, 0), ConfigError);
}

TEST(Png, RoundTripQuantizes) {
  TempDir dir;
  Image img(3, 2);
  img.pixels = {0.0f, 0.2f, 0.4f, 0.6f, 0.8f, 1.0f};
  write_png(dir / "x.png", img);
  const Image back = read_png(dir / "x.png");
  ASSERT_EQ(back.height, 3u);
  ASSERT_EQ(back.width, 2u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 0.5f / 255.0f + 1e-6f);
  EXPECT_THROW(read_png(dir / "missing.png"), DataError);
}
