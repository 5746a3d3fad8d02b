#include <cstdlib>
#include <filesystem>

#include "autospeed/dataset.hpp"
#include "doctest.h"

using namespace autospeed;
using namespace autospeed::data;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("autospeed_test_ds_" + name);
  fs::remove_all(p);
  return p;
}

DatasetSpec small_spec() {
  DatasetSpec s;
  s.n = 10;
  s.seed = 7;
  s.probe.samples = 256;
  return s;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t count = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel) || io::read_file(e.path()) != io::read_file(b / rel)) return false;
    ++count;
  }
  std::size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) other += e.is_regular_file();
  return count == other;
}

}  // namespace

TEST_CASE("split sizes") {
  std::vector<std::size_t> tr, va;
  split_indices(10, 0.2, 1, tr, va);
  CHECK(tr.size() == 8);
  CHECK(va.size() == 2);
  split_indices(6000, 0.2, 1, tr, va);
  CHECK(tr.size() == 4800);
  CHECK(va.size() == 1200);
  split_indices(600, 0.2, 1, tr, va);
  CHECK(tr.size() == 480);
  CHECK(va.size() == 120);
  std::vector<bool> seen(600, false);
  for (auto i : tr) seen[i] = true;
  for (auto i : va) {
    CHECK_FALSE(seen[i]);
    seen[i] = true;
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
}

TEST_CASE("gen_dataset writes a reproducible container") {
  const auto a = scratch_dir("a");
  const auto b = scratch_dir("b");
  const auto spec = small_spec();
  const auto ma = gen_dataset(spec, a);
  CHECK(ma["samples"].size() == 10);
  CHECK(ma["split"]["train"].size() == 8);
  CHECK(ma["split"]["val"].size() == 2);

  // Worker count must not change any byte.
  setenv("AUTOSPEED_THREADS", "3", 1);
  const auto mb = gen_dataset(spec, b);
  unsetenv("AUTOSPEED_THREADS");
  CHECK(ma["config_hash"] == mb["config_hash"]);
  CHECK(same_tree(a, b));

  const auto d = load_dataset(a);
  REQUIRE(d.samples.size() == 10);
  CHECK(d.train.size() == 8);
  for (const auto& s : d.samples) {
    CHECK(s.rf.shape() == Shape{48, 256});
    CHECK(s.sos.shape() == Shape{96, 96});
    for (float v : s.rf.vec()) REQUIRE(std::abs(v) <= 1024.0f);
    for (float v : s.sos.vec()) REQUIRE((v >= 1300.0f && v <= 1700.0f));
  }

  const auto back = spec_from_manifest(d.manifest);
  CHECK(back.n == spec.n);
  CHECK(back.probe.samples == 256);
  CHECK(back.gain == d.gain);

  SUBCASE("fixed gain is reused") {
    auto fixed = spec;
    fixed.n = 2;
    fixed.gain = d.gain;
    const auto c = scratch_dir("c");
    const auto mc = gen_dataset(fixed, c);
    CHECK(mc["gain"].get<double>() == d.gain);
    const auto dc = load_dataset(c);
    CHECK(dc.samples[0].rf == d.samples[0].rf);
  }
  SUBCASE("missing files and tampered config are rejected") {
    fs::remove(a / "samples/000003.sos.ustt");
    CHECK_THROWS_AS(load_dataset(a), IoError);
    auto m = io::read_json(b / "manifest.json");
    m["config"]["n"] = 11;
    io::write_json(b / "manifest.json", m);
    CHECK_THROWS_AS(load_dataset(b), FormatError);
  }
}

TEST_CASE("dataset spec validation") {
  auto s = small_spec();
  s.n = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.val_fraction = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}
