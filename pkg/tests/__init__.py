# test package initialization