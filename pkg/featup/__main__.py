from featup.main import main

main()
