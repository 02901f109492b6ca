#include <gtest/gtest.h>

#include <sstream>

#include "dfi/error.hpp"
#include "dfi/manifest.hpp"

namespace dfi {
namespace {

TEST(RunManifest, KeepsInsertionOrderAndOverwrites) {
  RunManifest m;
  m.set("command", "transform");
  m.set("k", 100);
  m.set("beta", 0.4);
  m.set("composite", true);
  m.set("k", 5);
  std::ostringstream out;
  m.write(out);
  EXPECT_EQ(out.str(), "command=transform\nk=5\nbeta=0.4\ncomposite=true\n");
  EXPECT_EQ(m.get("beta"), "0.4");
  EXPECT_FALSE(m.get("missing").has_value());
}

TEST(RunManifest, ParseRoundTrip) {
  RunManifest m;
  m.set("path", "/tmp/a=b.png");
  m.set("lambda", 0.001);
  m.set("seed", std::uint64_t{18446744073709551615u});
  std::ostringstream out;
  m.write(out);
  std::istringstream in(out.str());
  const RunManifest back = RunManifest::parse(in);
  EXPECT_EQ(back.entries(), m.entries());
  EXPECT_EQ(std::stod(*back.get("lambda")), 0.001);
}

TEST(RunManifest, RejectsBadKeysAndLines) {
  RunManifest m;
  EXPECT_THROW(m.set("", "x"), UsageError);
  EXPECT_THROW(m.set("a=b", "x"), UsageError);
  std::istringstream in("novalue\n");
  EXPECT_THROW(RunManifest::parse(in), FormatError);
}

TEST(FormatReal, ShortestRoundTrip) {
  EXPECT_EQ(format_real(0.4), "0.4");
  EXPECT_EQ(format_real(1.6), "1.6");
  EXPECT_EQ(format_real(2.0), "2");
  for (double v : {0.1, 1.0 / 3.0, 2.8, 1e-300, 123456.789}) EXPECT_EQ(std::stod(format_real(v)), v);
}

}  // namespace
}  // namespace dfi
