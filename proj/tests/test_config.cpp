#include <doctest.h>

#include <string>

#include "cafe/config.hpp"
#include "cafe/error.hpp"

using namespace cafe;

namespace {

const char* kMinimalConfig = R"({
  "method": {"name": "cafe"},
  "data": {"synthetic": {"default_disparity": true}},
  "partition": {"compositions": [[4, 1], [4, 1], [4, 1]], "persons_per_group": 0},
  "seeds": [1, 2],
  "output_dir": "out"
})";

}  // namespace

TEST_CASE("minimal config picks up the published defaults") {
    run::ExperimentConfig cfg = run::parse_config_text(kMinimalConfig);
    CHECK(cfg.method.method == fl::Method::cafe);
    CHECK(cfg.method.alpha == 0.92);
    CHECK(cfg.method.epsilon == 0.005);
    CHECK(cfg.method.cycle == 5);
    CHECK(cfg.method.epochs == 3);
    CHECK(cfg.method.total_rounds == 80);
    CHECK(cfg.method.swa_start_fraction == 0.2);
    CHECK(cfg.method.swa_start_round() == 16);
    CHECK(cfg.model.layer_widths == std::vector<int>{8, 16, 1});
    CHECK(cfg.seeds.size() == 2);
    REQUIRE(cfg.synthetic.has_value());
    CHECK(cfg.synthetic->group_ratio == 0.8);
    CHECK(cfg.participation.empty());
}

TEST_CASE("out-of-range fields are named in the error") {
    std::string text = kMinimalConfig;
    text.replace(text.find("\"name\": \"cafe\""), 14, "\"name\": \"cafe\", \"alpha\": 1.3");
    CHECK_THROWS_WITH_AS(run::parse_config_text(text), doctest::Contains("alpha"),
                         ConfigError);
}

TEST_CASE("unknown keys are rejected and listed") {
    std::string text = kMinimalConfig;
    text.replace(text.find("\"name\": \"cafe\""), 14, "\"name\": \"cafe\", \"typo_key\": 1");
    CHECK_THROWS_WITH_AS(run::parse_config_text(text), doctest::Contains("typo_key"),
                         ConfigError);
}

TEST_CASE("all violations are reported at once") {
    const char* broken = R"({
      "method": {"name": "nope", "alpha": 2.0},
      "data": {},
      "partition": {"compositions": []},
      "seeds": [],
      "output_dir": ""
    })";
    try {
        run::parse_config_text(broken);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("method.name") != std::string::npos);
        CHECK(msg.find("alpha") != std::string::npos);
        CHECK(msg.find("data:") != std::string::npos);
        CHECK(msg.find("compositions") != std::string::npos);
        CHECK(msg.find("seeds") != std::string::npos);
        CHECK(msg.find("output_dir") != std::string::npos);
    }
}

TEST_CASE("participation length must match the client count") {
    std::string text = R"({
      "method": {"name": "fedavg"},
      "data": {"synthetic": {"default_disparity": true}},
      "partition": {"compositions": [[4, 1], [4, 1]]},
      "participation": [0.5],
      "seeds": [1],
      "output_dir": "out"
    })";
    CHECK_THROWS_WITH_AS(run::parse_config_text(text), doctest::Contains("participation"),
                         ConfigError);
}

TEST_CASE("canonical echo is stable and hash-friendly") {
    run::ExperimentConfig a = run::parse_config_text(kMinimalConfig);
    run::ExperimentConfig b = run::parse_config_text(kMinimalConfig);
    CHECK(run::canonical_config(a) == run::canonical_config(b));

    std::string text = kMinimalConfig;
    text.replace(text.find("\"seeds\": [1, 2]"), 15, "\"seeds\": [1, 3]");
    run::ExperimentConfig c = run::parse_config_text(text);
    CHECK(run::canonical_config(a) != run::canonical_config(c));
}

TEST_CASE("not-json fails cleanly") {
    CHECK_THROWS_AS(run::parse_config_text("{ nope"), ConfigError);
    CHECK_THROWS_AS(run::parse_config("/nonexistent/config.json"), IoError);
}
