"""Fat-tailed self-similar profiles of Smoluchowski's coagulation equation."""
