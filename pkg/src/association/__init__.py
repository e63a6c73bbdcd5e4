# Association Package
