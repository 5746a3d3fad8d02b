#include <cstdlib>
#include <filesystem>
#include <string>

#include "autospeed/io.hpp"
#include "autospeed/rng.hpp"
#include "autospeed/training.hpp"
#include "doctest.h"

using namespace autospeed;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "autospeed_test_cli";

int cli(const std::string& args) {
  const auto log = (kRoot / "last.log").string();
  const int rc = std::system(("'" AUTOSPEED_CLI_PATH "' " + args + " > '" + log + "' 2>&1").c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string last_log() { return io::read_file(kRoot / "last.log"); }

struct Fresh {
  Fresh() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_CASE("usage errors exit 1 with usage text") {
  Fresh f;
  CHECK(cli("--no-such-flag gradcheck") == 1);
  CHECK(last_log().find("Usage:") != std::string::npos);
  CHECK(cli("") == 1);
  CHECK(cli("frobnicate") == 1);
  CHECK(cli("train-lae --out x") == 1);  // --data missing
  CHECK(cli("--help") == 0);
}

TEST_CASE("validation and runtime errors map to exit codes") {
  Fresh f;
  io::write_json(kRoot / "bad.json", {{"lae", {{"epochz", 3}}}});
  CHECK(cli("--config '" + (kRoot / "bad.json").string() + "' gradcheck") == 1);
  CHECK(last_log().find("lae.epochz") != std::string::npos);
  CHECK(cli("train-lae --data '" + (kRoot / "missing").string() + "' --out '" + (kRoot / "o").string() + "'") == 2);
  CHECK(cli("gen-data --n 2 --kind test --out '" + (kRoot / "t").string() + "'") == 1);  // no gain source
}

TEST_CASE("gradcheck passes and writes a report") {
  Fresh f;
  CHECK(cli("gradcheck --out '" + (kRoot / "gc").string() + "'") == 0);
  const auto j = io::read_json(kRoot / "gc" / "gradcheck.json");
  CHECK(j.at("pass") == true);
  CHECK(j.at("worst").get<double>() < 1e-4);
  CHECK(fs::exists(kRoot / "gc" / "resolved_config.json"));
}

TEST_CASE("gen-data reruns are byte-identical") {
  Fresh f;
  for (const char* d : {"a", "b"}) {
    REQUIRE(cli("--seed 7 --deterministic gen-data --n 2 --out '" + (kRoot / d).string() + "'") == 0);
  }
  for (const auto& e : fs::recursive_directory_iterator(kRoot / "a")) {
    if (!e.is_regular_file()) continue;
    const auto other = kRoot / "b" / fs::relative(e.path(), kRoot / "a");
    CHECK(io::read_file(e.path()) == io::read_file(other));
  }
  CHECK_FALSE(fs::exists(kRoot / "a" / "timing.json"));
  const auto m = io::read_json(kRoot / "a" / "manifest.json");
  CHECK(m.at("samples").size() == 2);
  CHECK(io::read_json(kRoot / "a" / "resolved_config.json").at("seed") == 7);
}

TEST_CASE("assemble then infer propagates shapes") {
  Fresh f;
  const ExperimentConfig cfg;
  const auto lae = models::LinkedModel::build(cfg.rf, cfg.sos, 3);
  io::save_checkpoint(train::to_checkpoint(lae, "h"), kRoot / "lae");
  io::save_checkpoint(train::to_checkpoint(models::IrmLayer::from_link(lae), "h"), kRoot / "irm");
  REQUIRE(cli("assemble --lae '" + (kRoot / "lae").string() + "' --irm '" + (kRoot / "irm").string() + "' --out '" +
              (kRoot / "m").string() + "'") == 0);

  Rng rng(4);
  Tensor frame(Shape{48, 512});
  for (auto& v : frame.vec()) v = static_cast<float>(rng.uniform(-500, 500));
  io::save_tensor(frame, kRoot / "frame.ustt");
  REQUIRE(cli("infer --model '" + (kRoot / "m").string() + "' --input '" + (kRoot / "frame.ustt").string() +
              "' --out '" + (kRoot / "inf").string() + "'") == 0);
  const auto map = io::load_tensor(kRoot / "inf" / "sos.ustt");
  CHECK(map.shape() == Shape{96, 96});
  const auto model = train::autospeed_from_checkpoint(io::load_checkpoint(kRoot / "m"));
  CHECK(model.infer(frame.reshaped({1, 1, 48, 512})).reshaped({96, 96}) == map);
  const auto pgm = io::read_file(kRoot / "inf" / "sos.pgm");
  CHECK(pgm.rfind("P5", 0) == 0);

  // An LAE checkpoint is not an inference model; a mismatched frame is a dimension error.
  CHECK(cli("infer --model '" + (kRoot / "lae").string() + "' --input '" + (kRoot / "frame.ustt").string() +
            "' --out '" + (kRoot / "x").string() + "'") == 1);
  io::save_tensor(Tensor(Shape{40, 512}), kRoot / "bad.ustt");
  CHECK(cli("infer --model '" + (kRoot / "m").string() + "' --input '" + (kRoot / "bad.ustt").string() +
            "' --out '" + (kRoot / "x").string() + "'") == 1);
}
