#pragma once

#include <string>

namespace acceptance {

struct CriterionResult {
    bool pass = false;
    std::string detail;
};

// Criteria 1, 9, 10: closed-form and oracle checks (fast).
CriterionResult criterion1();
CriterionResult criterion9();
CriterionResult criterion10();

// Criteria 2-8: simulation-backed checks.
CriterionResult criterion2(int workers);
CriterionResult criterion3();
CriterionResult criterion4();
CriterionResult criterion5(int workers);
CriterionResult criterion6(int workers);
CriterionResult criterion7();
CriterionResult criterion8(int workers);

std::string config_dir();

}  // namespace acceptance
