# Dense linear algebra shared by the solver and the theory engine
