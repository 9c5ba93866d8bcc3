#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "micronet/config.hpp"

using namespace micronet;
namespace fs = std::filesystem;

TEST_CASE("key=value parsing with comments and whitespace") {
  auto kv = parse_kv("a = 1\n# full comment\n  b=two # trailing\n\nc =3\n");
  CHECK(kv.size() == 3);
  CHECK(kv["a"] == "1");
  CHECK(kv["b"] == "two");
  CHECK(kv["c"] == "3");
  CHECK_THROWS_AS(parse_kv("not a pair\n"), ParseError);
}

TEST_CASE("rate list parsing and formatting") {
  auto lists = parse_rate_lists("1,1,2,3;1,2,3");
  REQUIRE(lists.size() == 2);
  CHECK(lists[0] == std::vector<int>{1, 1, 2, 3});
  CHECK(lists[1] == std::vector<int>{1, 2, 3});
  CHECK(format_rate_lists(lists) == "1,1,2,3;1,2,3");
}

TEST_CASE("architecture resolution: names, files, overrides") {
  CHECK(resolve_architecture("micro").variant == Variant::Micro);
  CHECK(resolve_architecture("unet").skip_mode == SkipMode::Concat);
  CHECK_THROWS_AS(resolve_architecture("nope"), ParamError);

  const auto path = (fs::temp_directory_path() / "mn_arch.cfg").string();
  {
    std::ofstream os(path);
    os << "variant=micro\nbase_e=32\n";
  }
  auto spec = resolve_architecture(path);
  CHECK(spec.variant == Variant::Micro);
  CHECK(spec.base_e == 32);
  fs::remove(path);

  CHECK_THROWS_AS(architecture_from_kv({{"bogus", "1"}}), ParamError);
  CHECK_THROWS_AS(architecture_from_kv({{"skip_mode", "sideways"}}), ParamError);
  // Changing the pool count without giving the matching rate lists is invalid.
  CHECK_THROWS_AS(architecture_from_kv({{"variant", "micro"}, {"num_pools", "3"}}), ParamError);
}

TEST_CASE("architecture snapshot re-parses to itself") {
  for (const char* name : {"micro", "bm1", "bm2", "bm3", "unet"}) {
    auto spec = ArchitectureSpec::from_name(name);
    auto text = architecture_to_kv(spec);
    auto back = architecture_from_kv(parse_kv(text));
    CHECK(architecture_to_kv(back) == text);
    CHECK(back.skip_mode == spec.skip_mode);
    CHECK(back.encoder_rates == spec.encoder_rates);
    CHECK(back.num_pools == spec.num_pools);
  }
}

TEST_CASE("run config resolution order: defaults < file < flags") {
  std::map<std::string, std::string> file_kv{{"epochs", "5"}, {"arch", "bm2"},
                                             {"learning_rate", "0.01"}};
  std::map<std::string, std::string> flags{{"epochs", "9"}, {"data_dir", "/tmp/d"}};
  auto cfg = RunConfig::resolve(file_kv, flags);
  CHECK(cfg.training.epochs == 9);          // flag beats file
  CHECK(cfg.arch == "bm2");                 // file beats default
  CHECK(cfg.training.learning_rate == 0.01);
  CHECK(cfg.training.momentum == 0.9);      // untouched default
  CHECK(cfg.data_dir == "/tmp/d");

  CHECK_THROWS_AS(RunConfig::resolve({{"mystery", "1"}}, {}), ParamError);
  CHECK_THROWS_AS(RunConfig::resolve({{"batch_size", "0"}}, {}), ParamError);

  // The snapshot is a fixed point of resolution.
  auto snap = cfg.to_kv();
  auto cfg2 = RunConfig::resolve(parse_kv(snap), {});
  CHECK(cfg2.to_kv() == snap);
}
