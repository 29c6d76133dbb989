"""Birth-weight prediction toolkit: EDA, hybrid imputation, feature selection,
a regression model zoo and a selector x model evaluation grid."""

__version__ = "0.1.0"
