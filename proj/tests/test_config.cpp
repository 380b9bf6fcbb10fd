#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "remix/config.hpp"
#include "remix/error.hpp"

using namespace remix;

TEST_CASE("empty config gives the documented defaults") {
    const RunConfig c = parse_config("");
    CHECK(c.get_int("connector_d") == 4);
    CHECK(c.get_int("connector_l") == 8);
    CHECK(c.get_int("control_n") == 4);
    CHECK(c.get_real("lambda") == doctest::Approx(0.2));
    CHECK(c.get_real("skip_t") == doctest::Approx(0.5));
    CHECK(c.get_int("steps") == 28);
    for (const auto& k : config_schema()) {
        CHECK_FALSE(k.doc.empty());
        CHECK(c.has_key(k.name));
    }
}

TEST_CASE("unknown keys and wrong types are rejected with the key named") {
    try {
        parse_config("bogus_key = 3\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
    }
    try {
        parse_config("depth = deep\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("int") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("equivariant = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("depth = 4\ndepth = 5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("depth 4\n"), ConfigError);
}

TEST_CASE("comments, whitespace and equivalent spellings hash identically") {
    const RunConfig a = parse_config("depth = 4\nlambda = 0.2  # default\n");
    const RunConfig b = parse_config("# header\n  lambda=0.20\n\ndepth=4\n");
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    CHECK(a.hash() != parse_config("depth = 5\n").hash());
}

TEST_CASE("same file loaded twice gives the same hash") {
    const auto dir = testing::scratch_dir("config");
    const auto path = dir / "run.cfg";
    std::ofstream(path) << "seed = 3\nequivariant = off\n";
    const RunConfig a = load_config(path), b = load_config(path);
    CHECK(a.hash() == b.hash());
    CHECK_FALSE(a.get_bool("equivariant"));
    CHECK_THROWS(load_config(dir / "missing.cfg"));
}

TEST_CASE("kebab and snake case conversions invert each other") {
    CHECK(snake_to_kebab("iters_warmup") == "iters-warmup");
    CHECK(kebab_to_snake("skip-t") == "skip_t");
    for (const auto& k : config_schema()) CHECK(kebab_to_snake(snake_to_kebab(k.name)) == k.name);
}

TEST_CASE("integer lists parse") {
    RunConfig c;
    c.set("eval_seeds", "3,1,4");
    CHECK(c.get_int_list("eval_seeds") == std::vector<int>{3, 1, 4});
}
