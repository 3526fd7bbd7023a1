// The gext executable: exit codes, seeding, artifacts, determinism and config round trips.

#include "gext/serialization.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using gext::io::json;

namespace {

struct Invocation {
  int code = -1;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gext_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs `gext <args>` inside the scratch directory; `env` is prepended verbatim.
  Invocation gext(const std::string& args, const std::string& env = "env -u GEXT_SEED") const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && " + env + " '" + GEXT_CLI_PATH + "' " + args + " 2> '" +
                            err.string() + "' > /dev/null";
    Invocation r;
    const int status = std::system(cmd.c_str());
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = read(err);
    fs::remove(err);
    return r;
  }

  static std::string read(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  }

  json doc(const std::string& name) const { return json::parse(read(dir_ / name)); }

  void write(const std::string& name, const std::string& content) const {
    std::ofstream(dir_ / name) << content;
  }

  std::set<std::string> listing() const {
    std::set<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir_)) out.insert(fs::relative(e.path(), dir_).string());
    return out;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, LimitCdfClosedForm) {
  const auto r = gext("limit-cdf --set R=0 --set c=1 -o lc");
  ASSERT_EQ(r.code, 0) << r.err;
  const json d = doc("lc.json");
  EXPECT_EQ(d.at("subcommand"), "limit-cdf");
  EXPECT_NEAR(d.at("result").at("value").get<double>(), 0.36787944117144233, 1e-14);
  EXPECT_EQ(d.at("result").at("method"), "gauss_hermite");
  EXPECT_TRUE(d.at("timing").contains("timestamp"));
  EXPECT_EQ(d.at("config_hash"), gext::io::config_hash(d.at("config")));
}

TEST_F(CliTest, GammaSumViolationExitsOne) {
  write("bad.json", R"({"plan": {"gammas": [0.25, 0.35]}, "replicates": 100})");
  const auto r = gext("simulate-sup -c bad.json -o out");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("gammas must sum to 1/2"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "out.json"));
}

TEST_F(CliTest, UnknownKeysAndBadValuesExitOne) {
  write("unknown.json", R"({"replicatez": 100})");
  EXPECT_EQ(gext("converge -c unknown.json").code, 1);
  EXPECT_EQ(gext("converge --set model.colour=red").code, 1);
  EXPECT_EQ(gext("converge --set u_values=3").code, 1);
  EXPECT_EQ(gext("limit-cdf --seed -4").code, 1);
  EXPECT_EQ(gext("limit-cdf --format xml").code, 1);
  EXPECT_EQ(gext("no-such-subcommand").code, 1);
  write("broken.json", "{");
  EXPECT_EQ(gext("limit-cdf -c broken.json").code, 1);
}

TEST_F(CliTest, BudgetFailureExitsTwo) {
  write("big.json", R"({"u_values": [3.0], "replicates": 100, "grid_budget": 100})");
  const auto r = gext("simulate-sup -c big.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("budget"), std::string::npos) << r.err;
}

TEST_F(CliTest, SeedPrecedence) {
  ASSERT_EQ(gext("limit-cdf -o a").code, 0);
  EXPECT_EQ(doc("a.json").at("metadata").at("seed"), 0);
  ASSERT_EQ(gext("limit-cdf -o b", "GEXT_SEED=41").code, 0);
  EXPECT_EQ(doc("b.json").at("metadata").at("seed"), 41);
  write("seeded.json", R"({"seed": 7})");
  ASSERT_EQ(gext("limit-cdf -c seeded.json -o c", "GEXT_SEED=41").code, 0);
  EXPECT_EQ(doc("c.json").at("config").at("seed"), 7);
  ASSERT_EQ(gext("limit-cdf -c seeded.json --seed 18446744073709551615 -o d", "GEXT_SEED=41").code, 0);
  EXPECT_EQ(doc("d.json").at("metadata").at("seed").get<std::uint64_t>(), 18446744073709551615ULL);
  EXPECT_EQ(gext("limit-cdf", "GEXT_SEED=abc").code, 1);
}

TEST_F(CliTest, ConvergeIsByteIdenticalAcrossWorkers) {
  write("small.json", R"({"replicates": 120, "u_values": [2.0, 2.25, 2.5]})");
  ASSERT_EQ(gext("converge -c small.json --seed 3 -w 1 -o one -f both").code, 0);
  ASSERT_EQ(gext("converge -c small.json --seed 3 -w 3 -o three -f both").code, 0);
  const json a = doc("one.json");
  const json b = doc("three.json");
  EXPECT_EQ(gext::io::canonical_payload(a), gext::io::canonical_payload(b));
  EXPECT_EQ(read(dir_ / "one.csv"), read(dir_ / "three.csv"));
  EXPECT_FALSE(a.at("config").contains("workers"));
  EXPECT_EQ(a.at("result").at("verdict").at("rule"), "discrepancy(u_max) <= discrepancy(u_min) + ci_width(u_min)");

  std::istringstream csv(read(dir_ / "one.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "u,empirical,ci_low,ci_high,theory,n");
}

TEST_F(CliTest, EmittedConfigRoundTrips) {
  write("small.json", R"({"replicates": 100, "u_values": [2.0, 2.5, 3.0], "model": {"family": "mixture_strong", "R": 0.5}})");
  ASSERT_EQ(gext("converge -c small.json --seed 11 -o first").code, 0);
  const json first = doc("first.json");
  write("again.json", first.at("config").dump());
  ASSERT_EQ(gext("converge -c again.json -o second").code, 0);
  const json second = doc("second.json");
  EXPECT_EQ(first.at("config"), second.at("config"));
  EXPECT_EQ(gext::io::canonical_payload(first), gext::io::canonical_payload(second));
}

TEST_F(CliTest, WritesOnlyUnderItsPrefix) {
  write("small.json", R"({"replicates": 100, "u_values": [2.0], "dump_field": true})");
  ASSERT_EQ(gext("simulate-sup -c small.json -o runs/sup -f both").code, 0);
  EXPECT_EQ(listing(), (std::set<std::string>{"small.json", "runs", "runs/sup.json", "runs/sup.csv",
                                              "runs/sup.field.bin"}));
  const auto [header, values] = gext::io::read_field_dump(dir_ / "runs" / "sup.field.bin");
  std::size_t n = 1;
  for (const auto& c : header.at("dims")) n *= c.get<std::size_t>();
  EXPECT_EQ(values.size(), n);
}

TEST_F(CliTest, LemmaSumsAndPickandsTables) {
  ASSERT_EQ(gext("lemma-sums --set R_lemma2=0 -o lemma -f csv").code, 0);
  std::istringstream csv(read(dir_ / "lemma.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "lemma,u,sum,max_term,terms,stride,approximated");
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("lemma2,3,0,0,", 0), 0u) << line;

  ASSERT_EQ(gext("pickands --set alpha=1 --set horizon=4 --set step=0.0625 --set replicates=1000 -o p -f both").code,
            0);
  EXPECT_EQ(read(dir_ / "p.csv").substr(0, 45), "alpha,horizon,step,replicates,value,std_error");
  EXPECT_GT(doc("p.json").at("result").at("value").get<double>(), 0.0);
}
