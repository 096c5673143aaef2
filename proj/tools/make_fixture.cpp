// SPDX-License-Identifier: Apache-2.0
//
// Writes a planted-shape fixture corpus: dataset.json, images/, scenes/, groups.json.

#include <iostream>

#include "CLI11.hpp"
#include "fixture.hpp"

int main(int argc, char** argv) {
    CLI::App app{"xsyn-fixture: write a planted-shape fixture corpus"};
    xsyn::fixture::SceneFixtureOptions options;
    std::string out;
    bool no_clutter = false;
    app.add_option("out", out, "Output directory")->required();
    app.add_option("--images", options.images, "Image count")->capture_default_str();
    app.add_option("--size", options.size, "Image side in pixels")->capture_default_str();
    app.add_option("--seed", options.seed, "Layout seed")->capture_default_str();
    app.add_flag("--no-clutter", no_clutter, "Leave out the clutter shapes (no idle regions)");
    CLI11_PARSE(app, argc, argv);
    options.clutter = !no_clutter;
    try {
        xsyn::fixture::write_fixture(xsyn::fixture::make_scene_fixture(options), out);
    } catch (const std::exception& e) {
        std::cerr << "{\"error\": {\"type\": \"runtime\", \"message\": \"" << e.what() << "\"}}" << std::endl;
        return 1;
    }
    return 0;
}
