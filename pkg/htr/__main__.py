from htr.main import main

main()
