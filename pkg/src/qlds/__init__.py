# QLDS classifier, performance theory, model selection and baselines
