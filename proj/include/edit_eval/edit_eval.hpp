#pragma once

#include "common.hpp"
#include "corpus.hpp"
#include "lm.hpp"
#include "mock_lm.hpp"
#include "remote_lm.hpp"
#include "editors.hpp"
#include "scoring.hpp"
#include "control.hpp"
#include "results.hpp"
#include "harness.hpp"
#include "rating.hpp"
#include "analysis.hpp"
#include "judge.hpp"
#include "rating_service.hpp"
