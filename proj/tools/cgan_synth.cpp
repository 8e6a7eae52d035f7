// Writes the bundled desk-scale corpora.
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "cgan/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"cgan-synth: write synthetic corpora"};
  std::string kind = "grammar";
  std::string out;
  std::uint64_t seed = 1;
  std::size_t tokens = 50000;
  app.add_option("kind", kind, "grammar | periodic")->check(CLI::IsMember({"grammar", "periodic"}));
  app.add_option("--out", out, "output file")->required();
  app.add_option("--seed", seed, "grammar seed");
  app.add_option("--tokens", tokens, "approximate token count");
  CLI11_PARSE(app, argc, argv);
  std::ofstream f(out, std::ios::binary);
  if (!f) {
    std::cerr << "cannot write " << out << "\n";
    return 1;
  }
  f << (kind == "grammar" ? cgan::synthetic_grammar_text(seed, tokens) : cgan::periodic_text(tokens));
  return f ? 0 : 1;
}
