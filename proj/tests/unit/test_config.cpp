#include "p2s/config.hpp"
#include "p2s/error.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>

using namespace p2s;
using nlohmann::json;

namespace {

std::string message_of(const json& j) {
  try {
    parse_pipeline(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty config gives the defaults") {
  const PipelineConfig c = parse_pipeline(json::object());
  REQUIRE(c.synth);
  CHECK(!c.inputs);
  CHECK(c.synth->wetness_schedule.size() == 10);
  CHECK(c.threshold_m2 == 1e4);
  CHECK(c.aggregate.lambda_m == 5.0);
  CHECK(c.aggregate.d_max_m == 30.0);
  CHECK(c.tau == 0.5);
  CHECK(c.model.variant == Variant::wassernetz);
  CHECK(c.model.net.optical_channels == 4);
  CHECK(c.train.options.epochs == 30);
  CHECK(c.train.options.flips);
  CHECK(!c.coregister);
}

TEST_CASE("unknown keys name their path") {
  const std::string m = message_of(json{{"aggregate", {{"lamda_m", 3.0}}}});
  CHECK(m.find("aggregate.lamda_m") != std::string::npos);
  CHECK(message_of(json{{"bogus", 1}}).find("bogus") != std::string::npos);
  CHECK(message_of(json{{"model", {{"footprint", 96}}}}).find("model.footprint") != std::string::npos);
}

TEST_CASE("validation errors") {
  CHECK(message_of(json{{"hydro", {{"threshold_m2", -1}}}}).find("hydro.threshold_m2") != std::string::npos);
  CHECK(message_of(json{{"aggregate", {{"lambda_m", 0}}}}).find("aggregate.lambda_m") != std::string::npos);
  CHECK(message_of(json{{"frequency", {{"tau", 1.0}}}}).find("frequency.tau") != std::string::npos);
  CHECK(message_of(json{{"model", {{"variant", "resnet"}}}}).find("model.variant") != std::string::npos);
  CHECK(message_of(json{{"seed", "one"}}).find("seed") != std::string::npos);
  CHECK(message_of(json{{"train", {{"weighting", "none"}}}}).find("train.weighting") != std::string::npos);
  CHECK(!message_of(json{{"synth", json::object()}, {"inputs", json::object()}}).empty());
  CHECK(!message_of(json{{"synth", {{"seed", 3}}}}).empty());
  CHECK(!message_of(json{{"jobs", 0}}).empty());
}

TEST_CASE("inputs resolve relative paths") {
  const json j = {{"inputs",
                   {{"dem", "dem.tif"},
                    {"optical", {{{"date", "2020-05-01"}, {"path", "a.tif"}}, {{"date", "2020-05-02"}, {"path", "/x/b.tif"}}}},
                    {"polygons", "p.geojson"},
                    {"label_date", "2020-05-02"}}}};
  const PipelineConfig c = parse_pipeline(j, "/data");
  REQUIRE(c.inputs);
  CHECK(c.inputs->dem == "/data/dem.tif");
  CHECK(c.inputs->optical[0].path == "/data/a.tif");
  CHECK(c.inputs->optical[1].path == "/x/b.tif");
  CHECK(c.inputs->terrain.empty());

  json bad = j;
  bad["inputs"]["label_date"] = "2020-06-01";
  CHECK(message_of(bad).find("inputs.label_date") != std::string::npos);
  bad = j;
  bad["inputs"]["optical"][0]["date"] = "2020-02-30";
  CHECK(message_of(bad).find("inputs.optical[0].date") != std::string::npos);
}

TEST_CASE("seed propagates and P2S_SEED overrides") {
  PipelineConfig c = parse_pipeline(json{{"seed", 7}});
  CHECK(c.synth->seed == 7);
  CHECK(c.model.net.seed == 7);
  CHECK(c.train.options.seed == 7);
  ::setenv("P2S_SEED", "42", 1);
  c = parse_pipeline(json{{"seed", 7}});
  CHECK(c.seed == 42);
  ::setenv("P2S_SEED", "4x", 1);
  CHECK_THROWS_AS(parse_pipeline(json::object()), ConfigError);
  ::unsetenv("P2S_SEED");
}

TEST_CASE("to_json round trips") {
  const json j = {{"seed", 3},
                  {"model", {{"base_channels", 8}, {"footprint_m", 96}}},
                  {"aggregate", {{"lambda_m", 2.5}}},
                  {"annual", {{"year", 2019}}},
                  {"coregister", {{"enabled", true}, {"options", {{"upsample", 20}}}}}};
  const PipelineConfig a = parse_pipeline(j);
  json out = to_json(a);
  // seeds are owned by the top level
  out["synth"].erase("seed");
  out["model"].erase("seed");
  out["train"].erase("seed");
  const PipelineConfig b = parse_pipeline(out);
  CHECK(to_json(b) == to_json(a));
  CHECK(b.year == 2019);
  CHECK(b.coreg.upsample == 20);
}

TEST_CASE("shipped example configs parse") {
  for (const char* name : {"synthetic.json", "quick.json"}) {
    CAPTURE(name);
    const std::filesystem::path p = std::filesystem::path(P2S_CONFIG_DIR) / name;
    CHECK_NOTHROW(parse_pipeline(read_json_file(p), p.parent_path()));
  }
}
