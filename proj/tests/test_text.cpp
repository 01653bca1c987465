#include "mpipe/text.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace mpipe;

TEST_CASE("split keeps empty fields")
{
    auto f = text::split("a\t\tb\t", '\t');
    REQUIRE(f.size() == 4);
    CHECK(f[0] == "a");
    CHECK(f[1].empty());
    CHECK(f[2] == "b");
    CHECK(f[3].empty());
}

TEST_CASE("format_double is shortest and round-trips")
{
    CHECK(text::format_double(0.0) == "0");
    CHECK(text::format_double(1.0) == "1");
    CHECK(text::format_double(0.25) == "0.25");
    CHECK(text::format_double(1e-30) == "1e-30");
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        double v = u(rng) * std::pow(10.0, static_cast<double>(static_cast<int>(rng() % 40) - 20));
        double back = 0;
        REQUIRE(text::parse_double(text::format_double(v), back));
        CHECK(back == v);
    }
}

TEST_CASE("strict number parsing")
{
    double d = 0;
    long l = 0;
    CHECK(text::parse_double("1.5", d));
    CHECK(d == 1.5);
    CHECK_FALSE(text::parse_double("1.5x", d));
    CHECK_FALSE(text::parse_double("", d));
    CHECK(text::parse_long("-42", l));
    CHECK(l == -42);
    CHECK_FALSE(text::parse_long("4.2", l));
}

TEST_CASE("shell_quote")
{
    CHECK(text::shell_quote("/tmp/a_b-c.fq") == "/tmp/a_b-c.fq");
    CHECK(text::shell_quote("a b") == "'a b'");
    CHECK(text::shell_quote("it's") == "'it'\\''s'");
}

TEST_CASE("line_col")
{
    auto [l, c] = text::line_col("ab\ncd\nef", 4);
    CHECK(l == 2);
    CHECK(c == 2);
}
