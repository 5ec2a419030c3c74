#pragma once

#include "attnmd/attention.hpp"
#include "attnmd/dataset.hpp"
#include "attnmd/experiments.hpp"
#include "attnmd/finite_diff.hpp"
#include "attnmd/linalg.hpp"
#include "attnmd/loss.hpp"
#include "attnmd/mirror.hpp"
#include "attnmd/reg_path.hpp"
#include "attnmd/rng.hpp"
#include "attnmd/svg.hpp"
#include "attnmd/svm.hpp"
#include "attnmd/train.hpp"
