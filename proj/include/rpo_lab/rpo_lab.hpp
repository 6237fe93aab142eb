#pragma once

#include "rpo_lab/advantage.hpp"
#include "rpo_lab/cli.hpp"
#include "rpo_lab/environments.hpp"
#include "rpo_lab/error.hpp"
#include "rpo_lab/mdp.hpp"
#include "rpo_lab/objective.hpp"
#include "rpo_lab/policy_model.hpp"
#include "rpo_lab/rng.hpp"
#include "rpo_lab/theory.hpp"
#include "rpo_lab/trainer.hpp"
#include "rpo_lab/verify.hpp"
