# Utils module initialization